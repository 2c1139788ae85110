use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Init, ParamStore};

/// Single-layer GRU with torch gate layout `[r, z, n]`:
/// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, `z = σ(…)`, `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
/// `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug)]
pub struct Gru {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    pub fn new(store: &ParamStore, name: &str, input_size: usize, hidden_size: usize) -> Result<Self> {
        let b = Init::Uniform(1.0 / (hidden_size as f64).sqrt());
        let h3 = 3 * hidden_size;
        Ok(Self {
            w_ih: store.get_or_init(&format!("{name}.w_ih"), &[h3, input_size], b)?,
            w_hh: store.get_or_init(&format!("{name}.w_hh"), &[h3, hidden_size], b)?,
            b_ih: store.get_or_init(&format!("{name}.b_ih"), &[h3], b)?,
            b_hh: store.get_or_init(&format!("{name}.b_hh"), &[h3], b)?,
            input_size,
            hidden_size,
        })
    }

    pub fn zero_state(&self, batch: usize) -> Result<Tensor> {
        Ok(Tensor::zeros((batch, self.hidden_size), self.w_ih.dtype(), self.w_ih.device())?)
    }

    /// One recurrence step; `x` is `batch × input`, `h` is `batch × hidden`.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        if x.dim(D::Minus1)? != self.input_size {
            return Err(Error::Shape(format!(
                "GRU input has width {}, expected {}",
                x.dim(D::Minus1)?,
                self.input_size
            )));
        }
        let hs = self.hidden_size;
        let gi = x.matmul(&self.w_ih.t()?)?.broadcast_add(&self.b_ih)?;
        let gh = h.matmul(&self.w_hh.t()?)?.broadcast_add(&self.b_hh)?;
        let r = sigmoid(&(gi.narrow(1, 0, hs)? + gh.narrow(1, 0, hs)?)?)?;
        let z = sigmoid(&(gi.narrow(1, hs, hs)? + gh.narrow(1, hs, hs)?)?)?;
        let n = (gi.narrow(1, 2 * hs, hs)? + (r * gh.narrow(1, 2 * hs, hs)?)?)?.tanh()?;
        Ok(((z.affine(-1.0, 1.0)? * n)? + (z * h)?)?)
    }

    /// Runs the sequence onward from `h`; returns the final state.
    pub fn run_from(&self, h: Tensor, xs: &[Tensor]) -> Result<Tensor> {
        xs.iter().try_fold(h, |h, x| self.step(x, &h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn scalar_gru(store: &ParamStore, g: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
        let w_ih = store.values_f64("g.w_ih").unwrap();
        let w_hh = store.values_f64("g.w_hh").unwrap();
        let b_ih = store.values_f64("g.b_ih").unwrap();
        let b_hh = store.values_f64("g.b_hh").unwrap();
        let (i_n, hs) = (g.input_size, g.hidden_size);
        let row = |w: &[f64], r: usize, v: &[f64], n: usize| -> f64 {
            (0..n).map(|c| w[r * n + c] * v[c]).sum()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        (0..hs)
            .map(|j| {
                let gi = |k: usize| row(&w_ih, k * hs + j, x, i_n) + b_ih[k * hs + j];
                let gh = |k: usize| row(&w_hh, k * hs + j, h, hs) + b_hh[k * hs + j];
                let r = sig(gi(0) + gh(0));
                let z = sig(gi(1) + gh(1));
                let n = (gi(2) + r * gh(2)).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    #[test]
    fn matches_scalar_reference() {
        let store = ParamStore::new(DType::F64, 5);
        let g = Gru::new(&store, "g", 3, 4).unwrap();
        let x = [0.3, -1.2, 0.8];
        let h = [0.1, 0.0, -0.5, 0.9];
        let xt = Tensor::new(&[x], store.device()).unwrap();
        let ht = Tensor::new(&[h], store.device()).unwrap();
        let got: Vec<f64> = g.step(&xt, &ht).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in got.iter().zip(scalar_gru(&store, &g, &x, &h)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resuming_from_a_prefix_state_matches_a_full_run() {
        let store = ParamStore::new(DType::F64, 6);
        let g = Gru::new(&store, "g", 2, 3).unwrap();
        let xs: Vec<Tensor> = (0..4)
            .map(|i| Tensor::new(&[[i as f64 * 0.3, 1.0 - i as f64]], store.device()).unwrap())
            .collect();
        let full = g.run_from(g.zero_state(1).unwrap(), &xs).unwrap();
        let mid = g.run_from(g.zero_state(1).unwrap(), &xs[..2]).unwrap();
        let resumed = g.run_from(mid, &xs[2..]).unwrap();
        let d = (full - resumed).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(d, 0.0);
    }
}
