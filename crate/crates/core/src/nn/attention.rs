use candle_core::{DType, Device, Tensor};

use super::{softmax_last, Ctx, Dropout, Linear, ParamStore};
use crate::error::{Error, Result};

const MASK_FILL: f64 = -1e9;

/// Additive attention bias `batch × 1 × 1 × len` from a key-validity mask.
pub fn attention_bias(valid: &[Vec<bool>], dtype: DType, device: &Device) -> Result<Tensor> {
    let b = valid.len();
    let l = valid.first().map_or(0, |r| r.len());
    let mut v = Vec::with_capacity(b * l);
    for row in valid {
        if row.len() != l {
            return Err(Error::Shape("ragged attention mask".into()));
        }
        v.extend(row.iter().map(|&ok| if ok { 0.0 } else { MASK_FILL as f32 }));
    }
    Ok(Tensor::from_vec(v, (b, 1, 1, l), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dropout: Dropout,
}

impl MultiHeadAttention {
    pub fn new(store: &ParamStore, name: &str, dim: usize, heads: usize, dropout: f64) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim)?,
            heads,
            dropout: Dropout::new(dropout),
        })
    }

    /// `x`: batch × len × dim; `bias`: optional batch × 1 × 1 × len.
    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>, ctx: &Ctx) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let dh = d / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let mut scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let p = self.dropout.forward(&softmax_last(&scores)?, ctx)?;
        let out = p.matmul(&v)?.transpose(1, 2)?.reshape((b, l, d))?;
        self.o.forward(&out)
    }

    pub fn detached(&self) -> Self {
        Self {
            q: self.q.detached(),
            k: self.k.detached(),
            v: self.v.detached(),
            o: self.o.detached(),
            heads: self.heads,
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_keys_do_not_change_valid_outputs() {
        let s = ParamStore::new(DType::F64, 5);
        let att = MultiHeadAttention::new(&s, "a", 8, 2, 0.0).unwrap();
        let base: Vec<f64> = (0..3 * 8).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let x3 = Tensor::from_vec(base.clone(), (1, 3, 8), &Device::Cpu).unwrap();
        let mut padded = base;
        padded.extend((0..2 * 8).map(|i| i as f64));
        let x5 = Tensor::from_vec(padded, (1, 5, 8), &Device::Cpu).unwrap();
        let bias = attention_bias(&[vec![true, true, true, false, false]], DType::F64, &Device::Cpu).unwrap();
        let y3 = att.forward(&x3, None, &Ctx::eval()).unwrap();
        let y5 = att.forward(&x5, Some(&bias), &Ctx::eval()).unwrap().narrow(1, 0, 3).unwrap();
        let diff = (y3 - y5).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let s = ParamStore::new(DType::F32, 0);
        assert!(MultiHeadAttention::new(&s, "a", 10, 3, 0.0).is_err());
    }
}
