use candle_core::Tensor;

use super::config::AcousticConfig;
use crate::error::Result;
use crate::nn::{sinusoid_table, Conv1d, Ctx, Dropout, LayerNorm, MultiHeadAttention, ParamStore};

/// Feed-forward transformer block: self-attention then a two-layer convolutional
/// feed-forward, each followed by residual add and layer norm. Works on `len × d`.
#[derive(Clone, Debug)]
pub struct FftBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    ln2: LayerNorm,
    dropout: Dropout,
}

impl FftBlock {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.num_heads, cfg.dropout)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            conv1: Conv1d::new(store, &format!("{name}.conv1"), d, cfg.conv_filter, cfg.conv_kernel)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), cfg.conv_filter, d, 1)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            dropout: Dropout::new(cfg.dropout),
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let a = self.attn.forward(&x.unsqueeze(0)?, None, ctx)?.squeeze(0)?;
        let x = self.ln1.forward(&(x + self.dropout.forward(&a, ctx)?)?)?;
        let f = self.conv2.forward_seq(&self.conv1.forward_seq(&x)?.relu()?)?;
        self.ln2.forward(&(&x + self.dropout.forward(&f, ctx)?)?)
    }
}

/// Sinusoidal positions added to the input, then a stack of [`FftBlock`]s.
#[derive(Clone, Debug)]
pub struct FftStack {
    blocks: Vec<FftBlock>,
    d_model: usize,
}

impl FftStack {
    pub fn new(store: &ParamStore, name: &str, layers: usize, cfg: &AcousticConfig) -> Result<Self> {
        Ok(Self {
            blocks: (0..layers)
                .map(|i| FftBlock::new(store, &format!("{name}.{i}"), cfg))
                .collect::<Result<_>>()?,
            d_model: cfg.d_model,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let len = x.dim(0)?;
        let pos = sinusoid_table(len, self.d_model, x.dtype(), x.device())?;
        let mut h = (x + pos)?;
        for b in &self.blocks {
            h = b.forward(&h, ctx)?;
        }
        Ok(h)
    }
}
