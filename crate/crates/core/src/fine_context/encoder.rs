use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_samples, MaskedBatch, PaddedBatch, TokenizedDialogueSample};
use crate::error::{Error, Result};
use crate::nn::{attention_bias, gelu, Ctx, Dropout, Embedding, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// 2 layers, 2 heads, hidden 64.
    pub fn toy(vocab_size: usize) -> Self {
        Self { num_layers: 2, num_heads: 2, hidden_size: 64, ff_size: 128, vocab_size, max_seq_len: 64, dropout: 0.0 }
    }

    /// BERT-base dimensions.
    pub fn paper(vocab_size: usize) -> Self {
        Self { num_layers: 12, num_heads: 12, hidden_size: 768, ff_size: 3072, vocab_size, max_seq_len: 256, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.num_layers, self.num_heads, self.hidden_size, self.ff_size, self.vocab_size, self.max_seq_len];
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("encoder sizes must be at least 1".into()));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    dropout: Dropout,
}

impl EncoderLayer {
    fn new(store: &ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let h = cfg.hidden_size;
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), h)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), h, cfg.num_heads, cfg.dropout)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), h)?,
            ff1: Linear::with_init(store, &format!("{name}.ff1"), h, cfg.ff_size, Init::Normal(0.02))?,
            ff2: Linear::with_init(store, &format!("{name}.ff2"), cfg.ff_size, h, Init::Normal(0.02))?,
            dropout: Dropout::new(cfg.dropout),
        })
    }

    fn forward(&self, x: &Tensor, bias: Option<&Tensor>, ctx: &Ctx) -> Result<Tensor> {
        let a = self.attn.forward(&self.ln1.forward(x)?, bias, ctx)?;
        let x = (x + self.dropout.forward(&a, ctx)?)?;
        let f = self.ff2.forward(&gelu(&self.ff1.forward(&self.ln2.forward(&x)?)?)?)?;
        Ok((&x + self.dropout.forward(&f, ctx)?)?)
    }

    fn detached(&self) -> Self {
        Self {
            ln1: self.ln1.detached(),
            attn: self.attn.detached(),
            ln2: self.ln2.detached(),
            ff1: self.ff1.detached(),
            ff2: self.ff2.detached(),
            dropout: self.dropout,
        }
    }
}

/// Encoder inputs as tensors: ids/segments/positions are `batch × len` u32.
pub struct EncoderInput {
    pub ids: Tensor,
    pub segments: Tensor,
    pub positions: Tensor,
    pub bias: Option<Tensor>,
}

impl EncoderInput {
    pub fn from_padded(b: &PaddedBatch, store: &ParamStore) -> Result<Self> {
        Self::build(&b.input_ids, &b.segment_ids, &b.position_ids, &b.attention_mask, store)
    }

    pub fn from_masked(b: &MaskedBatch, store: &ParamStore) -> Result<Self> {
        Self::build(&b.masked_input_ids, &b.segment_ids, &b.position_ids, &b.attention_mask, store)
    }

    pub fn from_sample(s: &TokenizedDialogueSample, store: &ParamStore) -> Result<Self> {
        Self::from_padded(&pad_samples(std::slice::from_ref(s), 0, 0), store)
    }

    /// One unpadded segment-0 sequence with positions `0..n`.
    pub fn from_ids(ids: &[u32], store: &ParamStore) -> Result<Self> {
        let n = ids.len();
        let pos: Vec<u32> = (0..n as u32).collect();
        Self::build(&[ids.to_vec()], &[vec![0; n]], &[pos], &[vec![true; n]], store)
    }

    fn build(
        ids: &[Vec<u32>],
        segs: &[Vec<u32>],
        pos: &[Vec<u32>],
        mask: &[Vec<bool>],
        store: &ParamStore,
    ) -> Result<Self> {
        let dev = store.device();
        let b = ids.len();
        let l = ids.first().map_or(0, Vec::len);
        let flat = |v: &[Vec<u32>]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v.concat(), (b, l), dev)?)
        };
        let bias = if mask.iter().all(|r| r.iter().all(|&m| m)) {
            None
        } else {
            Some(attention_bias(mask, store.dtype(), dev)?)
        };
        Ok(Self { ids: flat(ids)?, segments: flat(segs)?, positions: flat(pos)?, bias })
    }

    pub fn seq_len(&self) -> usize {
        self.ids.dim(1).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// batch × len × hidden.
    pub hidden_states: Tensor,
}

impl EncoderOutput {
    /// batch × hidden vectors at position 0.
    pub fn cls_vectors(&self) -> Result<Tensor> {
        Ok(self.hidden_states.narrow(1, 0, 1)?.squeeze(1)?)
    }
}

/// Pre-norm transformer encoder over token + position + segment embeddings.
#[derive(Clone, Debug)]
pub struct DialogueEncoder {
    pub config: EncoderConfig,
    tok: Embedding,
    pos: Embedding,
    seg: Embedding,
    emb_dropout: Dropout,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
}

impl DialogueEncoder {
    pub fn new(store: &ParamStore, prefix: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let init = Init::Normal(0.02);
        Ok(Self {
            tok: Embedding::new(store, &format!("{prefix}.tok"), config.vocab_size, h, init)?,
            pos: Embedding::new(store, &format!("{prefix}.pos"), config.max_seq_len, h, init)?,
            seg: Embedding::new(store, &format!("{prefix}.seg"), 2, h, init)?,
            emb_dropout: Dropout::new(config.dropout),
            layers: (0..config.num_layers)
                .map(|i| EncoderLayer::new(store, &format!("{prefix}.layers.{i}"), &config))
                .collect::<Result<_>>()?,
            final_ln: LayerNorm::new(store, &format!("{prefix}.final_ln"), h)?,
            config,
        })
    }

    /// A copy that computes the same function but never receives gradients.
    pub fn frozen(&self) -> Self {
        Self {
            config: self.config,
            tok: self.tok.detached(),
            pos: self.pos.detached(),
            seg: self.seg.detached(),
            emb_dropout: self.emb_dropout,
            layers: self.layers.iter().map(EncoderLayer::detached).collect(),
            final_ln: self.final_ln.detached(),
        }
    }

    pub fn forward(&self, input: &EncoderInput, ctx: &Ctx) -> Result<EncoderOutput> {
        let l = input.seq_len();
        if l > self.config.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence of {l} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        if input.ids.max_all()?.to_scalar::<u32>()? as usize >= self.config.vocab_size {
            return Err(Error::Shape("token id outside vocabulary".into()));
        }
        let x = ((self.tok.forward(&input.ids)? + self.pos.forward(&input.positions)?)?
            + self.seg.forward(&input.segments)?)?;
        let mut x = self.emb_dropout.forward(&x, ctx)?;
        for layer in &self.layers {
            x = layer.forward(&x, input.bias.as_ref(), ctx)?;
        }
        Ok(EncoderOutput { hidden_states: self.final_ln.forward(&x)? })
    }

    pub fn dtype(&self) -> DType {
        self.tok.table.dtype()
    }
}
