use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::acoustic::VarianceStats;
use crate::error::{Error, Result};
use crate::nn::optim::Adam;
use crate::nn::ParamStore;
use crate::tensor_archive::TensorArchive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Tts,
}

/// Every random draw is a pure function of (seed, step), so this pair is the RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub step: u64,
    pub rng: RngState,
    pub config: RunConfig,
    pub vocab_size: usize,
    pub num_speakers: usize,
    #[serde(default)]
    pub variance_stats: Option<VarianceStats>,
}

pub const META_FILE: &str = "meta.json";
pub const PARAMS_FILE: &str = "params.ntar";
pub const OPTIM_FILE: &str = "optim.ntar";

/// Checkpoint directory: `meta.json`, `params.ntar` and `optim.ntar`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: TensorArchive,
    pub optim: TensorArchive,
}

impl Checkpoint {
    pub fn capture(meta: CheckpointMeta, store: &ParamStore, opt: &Adam) -> Result<Self> {
        Ok(Self { meta, params: store.to_archive(None)?, optim: opt.to_archive()? })
    }

    /// Writes into a sibling temporary directory and renames it into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(tmp.join(META_FILE), meta).map_err(|e| Error::io(&tmp, e))?;
        self.params.save(&tmp.join(PARAMS_FILE))?;
        self.optim.save(&tmp.join(OPTIM_FILE))?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(META_FILE);
        let meta: CheckpointMeta =
            serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        Ok(Self {
            meta,
            params: TensorArchive::load(&dir.join(PARAMS_FILE))?,
            optim: TensorArchive::load(&dir.join(OPTIM_FILE))?,
        })
    }
}

/// `root/step-00000500`.
pub fn step_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("step-{step:08}"))
}

/// Highest-step checkpoint under `root`, if any.
pub fn latest_checkpoint(root: &Path) -> Result<Option<PathBuf>> {
    if !root.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for e in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = e.map_err(|e| Error::io(root, e))?.path();
        let step = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|s| s.parse::<u64>().ok());
        if let (Some(s), true) = (step, p.join(META_FILE).exists()) {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, p));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Removes all but the newest `keep` step directories.
pub fn prune_checkpoints(root: &Path, keep: usize) -> Result<()> {
    let mut steps: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("step-")))
        .collect();
    steps.sort();
    let excess = steps.len().saturating_sub(keep);
    for p in &steps[..excess] {
        std::fs::remove_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
