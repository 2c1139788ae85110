//! Non-autoregressive acoustic model: phoneme encoder, speaker table, context fusion,
//! monotonic aligner, variance adaptor, length regulator and mel decoder.

mod aligner;
mod config;
mod fft;
mod fusion;
mod model;
mod phonemes;
mod text;
mod variance;

pub use aligner::{monotonic_nll, path_score, viterbi_durations, Aligner, Alignment};
pub use config::{AcousticConfig, DurationSource, FineFusion, LossWeights};
pub use fft::{FftBlock, FftStack};
pub use fusion::{ContextInputs, Fusion, FusionInit};
pub use model::{mel_l1, AcousticInputs, AcousticLosses, AcousticModel, AcousticTargets, MelDecoder, Synthesis};
pub use phonemes::{G2p, PhonemeInventory, PhonemeSequence, ARPABET, SPOKEN_NOISE};
pub use text::{SpeakerTable, TextEncoder};
pub use variance::{
    duration_targets, durations_from_log, length_regulate, mse, ScalarStats, VarianceAdaptor, VarianceOutput,
    VariancePredictor, VarianceStats,
};

pub use crate::audiofeat::MelSpectrogram;
