use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How word-level H_F reaches phoneme positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineFusion {
    /// Each phoneme takes its own word's vector.
    Broadcast,
    /// Every phoneme takes the mean over words.
    Pooled,
}

/// Where training durations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DurationSource {
    Aligner,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mel: 1.0, duration: 1.0, pitch: 1.0, energy: 1.0, align: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    /// Width of H_P, H_F, H_C, H_S and of the decoder.
    pub d_model: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub conv_filter: usize,
    pub conv_kernel: usize,
    pub variance_filter: usize,
    pub variance_kernel: usize,
    pub variance_bins: usize,
    pub aligner_dim: usize,
    pub num_speakers: usize,
    pub dropout: f64,
    pub fine_fusion: FineFusion,
    pub duration_source: DurationSource,
    pub loss_weights: LossWeights,
}

impl AcousticConfig {
    /// Four encoder and four decoder FFT blocks at width 256.
    pub fn paper(num_speakers: usize) -> Self {
        Self {
            d_model: 256,
            num_heads: 2,
            encoder_layers: 4,
            decoder_layers: 4,
            conv_filter: 1024,
            conv_kernel: 9,
            variance_filter: 256,
            variance_kernel: 3,
            variance_bins: 256,
            aligner_dim: 128,
            num_speakers,
            dropout: 0.1,
            fine_fusion: FineFusion::Broadcast,
            duration_source: DurationSource::Aligner,
            loss_weights: LossWeights::default(),
        }
    }

    /// Same interface widths with shallower, narrower blocks for CPU runs.
    pub fn toy(num_speakers: usize) -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            conv_filter: 256,
            conv_kernel: 3,
            variance_filter: 64,
            aligner_dim: 64,
            dropout: 0.0,
            ..Self::paper(num_speakers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("conv_filter", self.conv_filter),
            ("variance_filter", self.variance_filter),
            ("variance_bins", self.variance_bins),
            ("aligner_dim", self.aligner_dim),
            ("num_speakers", self.num_speakers),
        ];
        if let Some((k, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config("d_model must be divisible by num_heads".into()));
        }
        if self.conv_kernel % 2 == 0 || self.variance_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
