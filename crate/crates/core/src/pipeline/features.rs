use std::collections::BTreeMap;
use std::path::Path;

use crate::acoustic::{ScalarStats, VarianceStats};
use crate::audiofeat::{
    extract_pitch_energy, read_wav, resample_to_target, wav_to_mel, MelSpectrogram, StftConfig,
};
use crate::corpus::{Conversation, Turn};
use crate::error::{Error, Result};
use crate::tensor_archive::{NamedTensor, TensorArchive};

/// Acoustic targets extracted from one turn's audio.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub mel: MelSpectrogram,
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

/// Features keyed by (conversation id, turn index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCache {
    pub items: BTreeMap<(String, usize), UtteranceFeatures>,
}

pub fn extract_turn_features(path: &Path) -> Result<UtteranceFeatures> {
    let w = resample_to_target(&read_wav(path)?)?;
    let mel = wav_to_mel(&w)?;
    let pe = extract_pitch_energy(&w, &StftConfig::default())?;
    Ok(UtteranceFeatures { mel, pitch: pe.pitch, energy: pe.energy })
}

fn check_durations(conv: &Conversation, turn: &Turn, frames: usize) -> Result<()> {
    if let Some(d) = &turn.durations {
        let s: u64 = d.iter().map(|&x| x as u64).sum();
        if s != frames as u64 {
            return Err(Error::Data(format!(
                "{} turn {}: durations sum to {s} but the audio has {frames} frames",
                conv.conversation_id, turn.turn_index
            )));
        }
    }
    Ok(())
}

impl FeatureCache {
    /// Extracts every turn that carries audio.
    pub fn extract(conversations: &[Conversation]) -> Result<Self> {
        let mut items = BTreeMap::new();
        for c in conversations {
            for t in &c.turns {
                if let Some(p) = &t.audio_path {
                    let f = extract_turn_features(p)?;
                    check_durations(c, t, f.mel.n_frames)?;
                    items.insert((c.conversation_id.clone(), t.turn_index), f);
                }
            }
        }
        Ok(Self { items })
    }

    pub fn get(&self, conversation: &str, turn: usize) -> Option<&UtteranceFeatures> {
        self.items.get(&(conversation.to_string(), turn))
    }

    /// Training-set pitch and energy statistics over the given keys.
    pub fn stats<'a>(&self, keys: impl IntoIterator<Item = &'a (String, usize)>) -> Result<VarianceStats> {
        let feats: Vec<&UtteranceFeatures> = keys.into_iter().filter_map(|k| self.items.get(k)).collect();
        Ok(VarianceStats {
            pitch: ScalarStats::from_values(feats.iter().flat_map(|f| &f.pitch))?,
            energy: ScalarStats::from_values(feats.iter().flat_map(|f| &f.energy))?,
        })
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for ((c, t), f) in &self.items {
            a.insert(format!("mel:{t}:{c}"), f.mel.to_named_tensor());
            a.insert(format!("pitch:{t}:{c}"), NamedTensor::new(vec![f.pitch.len()], f.pitch.clone())?);
            a.insert(format!("energy:{t}:{c}"), NamedTensor::new(vec![f.energy.len()], f.energy.clone())?);
        }
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let mut items = BTreeMap::new();
        for (key, nt) in &a.tensors {
            let mut parts = key.splitn(3, ':');
            let (Some("mel"), Some(t), Some(c)) = (parts.next(), parts.next(), parts.next()) else { continue };
            let turn: usize = t.parse().map_err(|_| Error::Archive(format!("bad feature key {key}")))?;
            let pitch = a.require(&format!("pitch:{t}:{c}"))?.data.clone();
            let energy = a.require(&format!("energy:{t}:{c}"))?.data.clone();
            let mel = MelSpectrogram::from_named_tensor(nt)?;
            if pitch.len() != mel.n_frames || energy.len() != mel.n_frames {
                return Err(Error::Archive(format!("feature lengths disagree for {c} turn {turn}")));
            }
            items.insert((c.to_string(), turn), UtteranceFeatures { mel, pitch, energy });
        }
        Ok(Self { items })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}
