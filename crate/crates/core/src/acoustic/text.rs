use candle_core::Tensor;

use super::config::AcousticConfig;
use super::fft::FftStack;
use super::phonemes::{PhonemeInventory, PhonemeSequence};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Embedding, Init, ParamStore};

/// Phoneme embedding plus sinusoidal positions through FFT blocks; yields H_P (`P × d`).
#[derive(Clone, Debug)]
pub struct TextEncoder {
    emb: Embedding,
    stack: FftStack,
}

impl TextEncoder {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        Ok(Self {
            emb: Embedding::new(
                store,
                &format!("{name}.emb"),
                PhonemeInventory::standard().len(),
                cfg.d_model,
                Init::Normal(1.0 / (cfg.d_model as f64).sqrt()),
            )?,
            stack: FftStack::new(store, &format!("{name}.fft"), cfg.encoder_layers, cfg)?,
        })
    }

    pub fn forward(&self, phonemes: &PhonemeSequence, ctx: &Ctx) -> Result<Tensor> {
        phonemes.validate()?;
        let ids = Tensor::from_slice(&phonemes.ids, phonemes.len(), self.emb.table.device())?;
        self.stack.forward(&self.emb.forward(&ids)?, ctx)
    }
}

/// Learnable per-speaker row H_S.
#[derive(Clone, Debug)]
pub struct SpeakerTable {
    emb: Embedding,
}

impl SpeakerTable {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        Ok(Self {
            emb: Embedding::new(store, &format!("{name}.table"), cfg.num_speakers, cfg.d_model, Init::Normal(0.1))?,
        })
    }

    /// H_S for one speaker, shape `d`.
    pub fn forward(&self, speaker: usize) -> Result<Tensor> {
        if speaker >= self.emb.count() {
            return Err(Error::Validation(format!(
                "speaker {speaker} outside table of {}",
                self.emb.count()
            )));
        }
        let idx = Tensor::new(&[speaker as u32], self.emb.table.device())?;
        Ok(self.emb.forward(&idx)?.squeeze(0)?)
    }
}
