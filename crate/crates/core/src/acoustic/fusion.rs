use candle_core::{Tensor, D};

use super::config::{AcousticConfig, FineFusion};
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionInit {
    Xavier,
    /// Identity on the H_P block, zeros elsewhere and a zero bias.
    Identity,
}

/// Context inputs besides H_P and H_S.
#[derive(Debug, Clone)]
pub struct ContextInputs {
    /// H_F, `words × d`.
    pub fine: Tensor,
    /// H_C, `d`.
    pub coarse: Tensor,
}

/// Linear map of `[H_P(t); H_F(word_map(t)); H_C; H_S]` (width `4d`) back to `d`.
///
/// The product is evaluated block by block, so with zero H_F and H_C the result is
/// bitwise the context-free `[H_P; H_S]` projection computed by [`Fusion::forward_baseline`].
#[derive(Clone, Debug)]
pub struct Fusion {
    weight: Tensor,
    bias: Tensor,
    d: usize,
    mode: FineFusion,
}

impl Fusion {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig, init: FusionInit) -> Result<Self> {
        let d = cfg.d_model;
        let wname = format!("{name}.weight");
        let weight = match init {
            FusionInit::Xavier => {
                store.get_or_init(&wname, &[d, 4 * d], Init::XavierUniform { fan_in: 4 * d, fan_out: d })?
            }
            FusionInit::Identity => {
                let w = store.get_or_init(&wname, &[d, 4 * d], Init::Zeros)?;
                let mut v = vec![0.0; d * 4 * d];
                for i in 0..d {
                    v[i * 4 * d + i] = 1.0;
                }
                store.set_from_f64(&wname, &v)?;
                w
            }
        };
        Ok(Self {
            weight,
            bias: store.get_or_init(&format!("{name}.bias"), &[d], Init::Zeros)?,
            d,
            mode: cfg.fine_fusion,
        })
    }

    fn block(&self, x: &Tensor, i: usize) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.narrow(1, i * self.d, self.d)?.t()?)?)
    }

    fn check_width(&self, t: &Tensor, what: &str) -> Result<()> {
        if t.dim(D::Minus1)? != self.d {
            return Err(Error::Shape(format!("{what} has width {}, expected {}", t.dim(D::Minus1)?, self.d)));
        }
        Ok(())
    }

    fn base(&self, h_p: &Tensor, h_s: &Tensor) -> Result<Tensor> {
        self.check_width(h_p, "H_P")?;
        self.check_width(h_s, "H_S")?;
        Ok(self.block(h_p, 0)?.broadcast_add(&self.block(&h_s.unsqueeze(0)?, 3)?)?)
    }

    /// Context-free path over H_P and H_S only.
    pub fn forward_baseline(&self, h_p: &Tensor, h_s: &Tensor) -> Result<Tensor> {
        Ok(self.base(h_p, h_s)?.broadcast_add(&self.bias)?)
    }

    pub fn forward(&self, h_p: &Tensor, h_s: &Tensor, context: &ContextInputs, word_map: &[usize]) -> Result<Tensor> {
        let p = h_p.dim(0)?;
        if word_map.len() != p {
            return Err(Error::Shape(format!("{p} phonemes but {} word-map entries", word_map.len())));
        }
        let words = context.fine.dim(0)?;
        let expected = word_map.iter().max().map_or(0, |m| m + 1);
        if words != expected {
            return Err(Error::Shape(format!("H_F has {words} words, word map needs {expected}")));
        }
        self.check_width(&context.fine, "H_F")?;
        self.check_width(&context.coarse, "H_C")?;
        let f_proj = self.block(&context.fine, 1)?;
        let f = match self.mode {
            FineFusion::Broadcast => {
                let idx: Vec<u32> = word_map.iter().map(|&w| w as u32).collect();
                f_proj.index_select(&Tensor::from_vec(idx, p, h_p.device())?, 0)?
            }
            FineFusion::Pooled => f_proj.mean_keepdim(0)?.broadcast_as((p, self.d))?,
        };
        let c = self.block(&context.coarse.unsqueeze(0)?, 2)?;
        let x = (self.base(h_p, h_s)? + f)?.broadcast_add(&c)?;
        Ok(x.broadcast_add(&self.bias)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn rows(t: &Tensor) -> Vec<Vec<f32>> {
        t.to_dtype(DType::F32).unwrap().to_vec2().unwrap()
    }

    fn setup(init: FusionInit, mode: FineFusion) -> (ParamStore, Fusion) {
        let store = ParamStore::new(DType::F32, 3);
        let cfg = AcousticConfig { fine_fusion: mode, ..AcousticConfig::toy(2) };
        let f = Fusion::new(&store, "fuse", &cfg, init).unwrap();
        (store, f)
    }

    fn rand(store: &ParamStore, name: &str, shape: &[usize]) -> Tensor {
        store.get_or_init(name, shape, Init::Normal(1.0)).unwrap()
    }

    #[test]
    fn broadcast_shares_word_slices() {
        let (store, f) = setup(FusionInit::Xavier, FineFusion::Broadcast);
        let hp = Tensor::zeros((5, 256), DType::F32, store.device()).unwrap();
        let hs = Tensor::zeros(256, DType::F32, store.device()).unwrap();
        let ctx = ContextInputs { fine: rand(&store, "x.f", &[2, 256]), coarse: rand(&store, "x.c", &[256]) };
        let out = rows(&f.forward(&hp, &hs, &ctx, &[0, 0, 0, 1, 1]).unwrap());
        assert_eq!(out.len(), 5);
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
        assert_eq!(out[3], out[4]);
        assert_ne!(out[2], out[3]);
        assert!(f.forward(&hp, &hs, &ctx, &[0, 0, 0, 0, 0]).is_err());
        assert!(f.forward(&hp, &hs, &ctx, &[0, 1, 2, 2, 2]).is_err());
    }

    #[test]
    fn identity_init_with_zero_context_returns_hp() {
        let (store, f) = setup(FusionInit::Identity, FineFusion::Broadcast);
        let hp = rand(&store, "x.p", &[4, 256]);
        let z = |n: usize| Tensor::zeros(n, DType::F32, store.device()).unwrap();
        let ctx = ContextInputs { fine: Tensor::zeros((2, 256), DType::F32, store.device()).unwrap(), coarse: z(256) };
        let out = f.forward(&hp, &z(256), &ctx, &[0, 0, 1, 1]).unwrap();
        assert_eq!(rows(&out), rows(&hp));
    }

    #[test]
    fn zero_context_matches_baseline_bitwise() {
        for mode in [FineFusion::Broadcast, FineFusion::Pooled] {
            let (store, f) = setup(FusionInit::Xavier, mode);
            let hp = rand(&store, "x.p", &[6, 256]);
            let hs = rand(&store, "x.s", &[256]);
            let ctx = ContextInputs {
                fine: Tensor::zeros((3, 256), DType::F32, store.device()).unwrap(),
                coarse: Tensor::zeros(256, DType::F32, store.device()).unwrap(),
            };
            let full = f.forward(&hp, &hs, &ctx, &[0, 0, 1, 1, 2, 2]).unwrap();
            let base = f.forward_baseline(&hp, &hs).unwrap();
            assert_eq!(rows(&full), rows(&base));
        }
    }

    #[test]
    fn pooled_uses_the_word_mean() {
        let (store, f) = setup(FusionInit::Identity, FineFusion::Pooled);
        // move the identity onto the H_F block
        let d = 256;
        let mut v = vec![0.0; d * 4 * d];
        for i in 0..d {
            v[i * 4 * d + d + i] = 1.0;
        }
        store.set_from_f64("fuse.weight", &v).unwrap();
        let fine = rand(&store, "x.f", &[2, 256]);
        let z = |n: usize| Tensor::zeros(n, DType::F32, store.device()).unwrap();
        let hp = Tensor::zeros((3, 256), DType::F32, store.device()).unwrap();
        let ctx = ContextInputs { fine: fine.clone(), coarse: z(256) };
        let out = rows(&f.forward(&hp, &z(256), &ctx, &[0, 1, 1]).unwrap());
        let fr = rows(&fine);
        for j in 0..d {
            let mean = (fr[0][j] + fr[1][j]) / 2.0;
            assert!(out.iter().all(|r| (r[j] - mean).abs() < 1e-6));
        }
    }
}
