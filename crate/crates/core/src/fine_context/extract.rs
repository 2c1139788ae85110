use candle_core::Tensor;

use super::encoder::{DialogueEncoder, EncoderConfig, EncoderInput};
use crate::corpus::TokenizedDialogueSample;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};

/// One `d_ctx` vector per current-utterance word.
#[derive(Debug, Clone)]
pub struct FineContextEmbedding {
    /// words × d_ctx.
    pub vectors: Tensor,
    pub word_positions: Vec<usize>,
}

impl FineContextEmbedding {
    pub fn num_words(&self) -> usize {
        self.word_positions.len()
    }
}

/// Dialogue encoder with a linear head applied to the current utterance's word positions.
#[derive(Clone, Debug)]
pub struct FineContextEncoder {
    pub encoder: DialogueEncoder,
    proj: Linear,
    pub d_ctx: usize,
}

impl FineContextEncoder {
    pub fn new(store: &ParamStore, prefix: &str, config: EncoderConfig, d_ctx: usize) -> Result<Self> {
        Ok(Self {
            encoder: DialogueEncoder::new(store, &format!("{prefix}.enc"), config)?,
            proj: Linear::new(store, &format!("{prefix}.proj"), config.hidden_size, d_ctx)?,
            d_ctx,
        })
    }

    pub fn extract(
        &self,
        sample: &TokenizedDialogueSample,
        store: &ParamStore,
        ctx: &Ctx,
    ) -> Result<FineContextEmbedding> {
        if sample.current_span.is_empty() || sample.word_positions.is_empty() {
            return Err(Error::Validation("sample has an empty current span".into()));
        }
        let out = self.encoder.forward(&EncoderInput::from_sample(sample, store)?, ctx)?;
        let hidden = out.hidden_states.squeeze(0)?;
        let idx: Vec<u32> = sample.word_positions.iter().map(|&p| p as u32).collect();
        let idx = Tensor::from_vec(idx, sample.word_positions.len(), hidden.device())?;
        let words = hidden.index_select(&idx, 0)?;
        Ok(FineContextEmbedding {
            vectors: self.proj.forward(&words)?,
            word_positions: sample.word_positions.clone(),
        })
    }
}
