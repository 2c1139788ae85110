use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticConfig;
use crate::error::{Error, Result};
use crate::fine_context::{EncoderConfig, TurnSelection};

pub const MIN_T: usize = 1;
pub const MAX_T: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected toy or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseSettings {
    pub d_gru: usize,
    pub d_ctx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub mask_prob: f64,
    pub turn_selection: TurnSelection,
    pub log_every: u64,
    pub valid_every: u64,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtsSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub log_every: u64,
    pub valid_every: u64,
    pub checkpoint_every: u64,
    /// Zeroes H_F and H_C and fuses only H_P and H_S.
    pub use_context: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub griffin_lim_iters: usize,
}

/// Every knob of a run. `encoder.vocab_size` and `acoustic.num_speakers` are replaced
/// by the ingested corpus's values when models are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Dialogue turn window T: the current turn plus up to T − 1 predecessors.
    pub turn_window: usize,
    pub allow_any_t: bool,
    /// Train / valid / test fractions at conversation level.
    pub split: [f64; 3],
    pub encoder: EncoderConfig,
    pub coarse: CoarseSettings,
    pub acoustic: AcousticConfig,
    pub pretrain: PretrainSettings,
    pub tts: TtsSettings,
    pub synth: SynthSettings,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self {
                profile: p,
                seed: 1,
                turn_window: 2,
                allow_any_t: false,
                split: [0.8, 0.1, 0.1],
                encoder: EncoderConfig::toy(0),
                coarse: CoarseSettings { d_gru: 256, d_ctx: 256 },
                acoustic: AcousticConfig::toy(0),
                pretrain: PretrainSettings {
                    steps: 2000,
                    batch_size: 8,
                    lr: 1e-3,
                    warmup_steps: 100,
                    mask_prob: 0.15,
                    turn_selection: TurnSelection::Random,
                    log_every: 10,
                    valid_every: 200,
                    checkpoint_every: 500,
                },
                tts: TtsSettings {
                    steps: 3000,
                    batch_size: 2,
                    lr: 1e-3,
                    warmup_steps: 100,
                    log_every: 10,
                    valid_every: 250,
                    checkpoint_every: 500,
                    use_context: true,
                },
                synth: SynthSettings { griffin_lim_iters: 60 },
            },
            Profile::Paper => Self {
                profile: p,
                encoder: EncoderConfig::paper(0),
                acoustic: AcousticConfig::paper(0),
                pretrain: PretrainSettings {
                    steps: 900_000,
                    batch_size: 32,
                    lr: 1e-4,
                    warmup_steps: 10_000,
                    log_every: 100,
                    valid_every: 5000,
                    checkpoint_every: 10_000,
                    ..Self::profile(Profile::Toy).pretrain
                },
                tts: TtsSettings {
                    steps: 900_000,
                    batch_size: 32,
                    lr: 1e-4,
                    warmup_steps: 4000,
                    log_every: 100,
                    valid_every: 5000,
                    checkpoint_every: 10_000,
                    use_context: true,
                },
                ..Self::profile(Profile::Toy)
            },
        }
    }

    /// Profile defaults with the TOML document's keys merged over them.
    pub fn from_toml_str(text: &str, default_profile: Profile) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let profile = match overrides.get("profile") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
            None => default_profile,
        };
        let base = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, overrides)?;
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, default_profile)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_t(self.turn_window, self.allow_any_t)?;
        if self.split.iter().any(|r| !(*r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be positive and sum to 1", self.split)));
        }
        if self.pretrain.batch_size == 0 || self.tts.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.pretrain.mask_prob > 0.0 && self.pretrain.mask_prob < 1.0) {
            return Err(Error::Config("mask_prob must lie in (0, 1)".into()));
        }
        if self.coarse.d_ctx != self.acoustic.d_model {
            return Err(Error::Config("coarse.d_ctx must equal acoustic.d_model".into()));
        }
        if self.synth.griffin_lim_iters == 0 {
            return Err(Error::Config("griffin_lim_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn encoder_for(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig { vocab_size, ..self.encoder }
    }

    pub fn acoustic_for(&self, num_speakers: usize) -> AcousticConfig {
        AcousticConfig { num_speakers, ..self.acoustic }
    }
}

/// Rejects T outside `[1, 14]` unless `allow_any` is set (T = 0 is never valid).
pub fn validate_t(t: usize, allow_any: bool) -> Result<()> {
    if t == 0 || (!allow_any && !(MIN_T..=MAX_T).contains(&t)) {
        return Err(Error::Config(format!(
            "turn window T = {t} outside [{MIN_T}, {MAX_T}] (pass --allow-any-T to override)"
        )));
    }
    Ok(())
}

fn merge(mut base: toml::Table, over: toml::Table) -> Result<toml::Table> {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)?));
            }
            (None, _) => return Err(Error::Config(format!("unknown config key {k:?}"))),
            (Some(_), v) => {
                base.insert(k, v);
            }
        }
    }
    Ok(base)
}
