use candle_core::{Tensor, D};

use super::{Ctx, Init, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::with_init(store, name, fan_in, fan_out, Init::XavierUniform { fan_in, fan_out })
    }

    pub fn with_init(
        store: &ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
    ) -> Result<Self> {
        let weight = store.get_or_init(&format!("{name}.weight"), &[fan_out, fan_in], init)?;
        let bias = store.get_or_init(&format!("{name}.bias"), &[fan_out], Init::Zeros)?;
        Ok(Self { weight, bias: Some(bias) })
    }

    pub fn no_bias(store: &ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let weight = store.get_or_init(
            &format!("{name}.weight"),
            &[fan_out, fan_in],
            Init::XavierUniform { fan_in, fan_out },
        )?;
        Ok(Self { weight, bias: None })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&wt)?,
            _ => x.broadcast_matmul(&wt)?,
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.as_ref().map(|b| b.detach()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.get_or_init(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: store.get_or_init(&format!("{name}.beta"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }

    pub fn detached(&self) -> Self {
        Self { gamma: self.gamma.detach(), beta: self.beta.detach(), eps: self.eps }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(store: &ParamStore, name: &str, count: usize, dim: usize, init: Init) -> Result<Self> {
        Ok(Self { table: store.get_or_init(&format!("{name}.table"), &[count, dim], init)? })
    }

    pub fn count(&self) -> usize {
        self.table.dim(0).unwrap_or(0)
    }

    /// `ids` of any shape (u32) → `ids.shape × dim`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut shape = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let rows = self.table.index_select(&flat, 0)?;
        shape.push(self.table.dim(1)?);
        Ok(rows.reshape(shape)?)
    }

    pub fn detached(&self) -> Self {
        Self { table: self.table.detach() }
    }
}

/// 1-D convolution over a `batch × channels × length` input with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    kernel: usize,
}

impl Conv1d {
    pub fn new(store: &ParamStore, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        assert!(kernel % 2 == 1, "same-padding conv needs an odd kernel");
        let init = Init::XavierUniform { fan_in: cin * kernel, fan_out: cout * kernel };
        Ok(Self {
            weight: store.get_or_init(&format!("{name}.weight"), &[cout, cin, kernel], init)?,
            bias: store.get_or_init(&format!("{name}.bias"), &[cout], Init::Zeros)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv1d(&self.weight, self.kernel / 2, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }

    /// Same convolution on a `length × channels` sequence, computed as one matmul over
    /// the stacked shifted copies of the zero-padded input.
    pub fn forward_seq(&self, x: &Tensor) -> Result<Tensor> {
        let (len, cin) = x.dims2()?;
        let (cout, _, k) = self.weight.dims3()?;
        let w = self.weight.transpose(1, 2)?.reshape((cout, k * cin))?;
        let cols = if k == 1 {
            x.clone()
        } else {
            let pad = Tensor::zeros((k / 2, cin), x.dtype(), x.device())?;
            let padded = Tensor::cat(&[&pad, x, &pad], 0)?;
            let shifted = (0..k).map(|i| padded.narrow(0, i, len)).collect::<candle_core::Result<Vec<_>>>()?;
            Tensor::cat(&shifted, 1)?
        };
        Ok(cols.matmul(&w.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p }
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        if !ctx.train || self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let mask = ctx.bernoulli_keep(x.elem_count(), keep);
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok((x.mul(&mask)? / keep)?)
    }
}
