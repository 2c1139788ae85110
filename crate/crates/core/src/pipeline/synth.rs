use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::validate_t;
use super::features::FeatureCache;
use super::model::{ContextTts, TtsExample};
use crate::acoustic::{G2p, VarianceStats};
use crate::audiofeat::{griffin_lim, write_wav, GriffinLim, MelSpectrogram};
use crate::corpus::{Conversation, CorpusBundle};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor_archive::TensorArchive;

/// One manifest line: which corpus turn to synthesize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub conversation_id: String,
    pub turn_index: usize,
    #[serde(default)]
    pub id: Option<String>,
}

impl ManifestRow {
    pub fn name(&self) -> String {
        self.id.clone().unwrap_or_else(|| format!("{}_t{:03}", self.conversation_id, self.turn_index))
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Written next to each wav.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub conversation_id: String,
    pub turn_index: usize,
    pub turn_window: usize,
    pub history_turns: Vec<usize>,
    pub use_context: bool,
    pub seed: u64,
    pub griffin_lim_seed: u64,
    pub griffin_lim_iters: usize,
    pub durations: Vec<u32>,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct RowOutput {
    pub row: ManifestRow,
    pub example: TtsExample,
    pub mel: MelSpectrogram,
    pub durations: Vec<u32>,
    pub wav: PathBuf,
}

/// A trained model plus everything synthesis needs.
pub struct Synthesizer<'a> {
    pub model: &'a ContextTts,
    pub store: &'a ParamStore,
    pub stats: VarianceStats,
    pub bundle: &'a CorpusBundle,
    pub g2p: G2p,
}

impl<'a> Synthesizer<'a> {
    pub fn new(model: &'a ContextTts, store: &'a ParamStore, stats: VarianceStats, bundle: &'a CorpusBundle) -> Self {
        Self { model, store, stats, bundle, g2p: G2p::bundled() }
    }

    fn locate(&self, row: &ManifestRow) -> Result<(&'a Conversation, usize)> {
        let conv = self
            .bundle
            .conversation(&row.conversation_id)
            .ok_or_else(|| Error::Data(format!("unknown conversation {}", row.conversation_id)))?;
        let pos = conv.turns.iter().position(|t| t.turn_index == row.turn_index).ok_or_else(|| {
            Error::Data(format!("conversation {} has no turn {}", row.conversation_id, row.turn_index))
        })?;
        Ok((conv, pos))
    }

    /// Predicted-duration mel for one row, or with `durations` forced when given.
    pub fn mel(
        &self,
        row: &ManifestRow,
        turn_window: usize,
        features: Option<&FeatureCache>,
        durations: Option<&[u32]>,
    ) -> Result<(TtsExample, MelSpectrogram, Vec<u32>)> {
        let (conv, pos) = self.locate(row)?;
        let ex = self.model.prepare(conv, pos, turn_window, &self.bundle.vocab, &self.g2p, features)?;
        let s = self.model.synthesize(&ex, conv, &self.bundle.vocab, &self.stats, self.store, durations)?;
        Ok((ex, s.mel, s.durations))
    }

    /// Mel, waveform and sidecar for one row under `out_dir`.
    pub fn render_row(&self, row: &ManifestRow, turn_window: usize, out_dir: &Path, gl_iters: usize) -> Result<RowOutput> {
        validate_t(turn_window, self.model.config.allow_any_t)?;
        let (example, mel, durations) = self.mel(row, turn_window, None, None)?;
        let gl = GriffinLim { iterations: gl_iters, seed: self.model.config.seed };
        let audio = griffin_lim(&mel, &gl)?;
        let stem = out_dir.join(format!("{}_T{turn_window:02}", row.name()));
        let wav = stem.with_extension("wav");
        write_wav(&wav, &audio.waveform)?;
        let mut a = TensorArchive::new();
        a.insert("mel", mel.to_named_tensor());
        a.save(&stem.with_extension("mel.ntar"))?;
        let side = Sidecar {
            conversation_id: row.conversation_id.clone(),
            turn_index: row.turn_index,
            turn_window,
            history_turns: example.history_turns.clone(),
            use_context: self.model.use_context(),
            seed: self.model.config.seed,
            griffin_lim_seed: gl.seed,
            griffin_lim_iters: gl.iterations,
            durations: durations.clone(),
            frames: mel.n_frames,
        };
        let side_path = stem.with_extension("json");
        std::fs::write(&side_path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&side_path, e))?;
        Ok(RowOutput { row: row.clone(), example, mel, durations, wav })
    }
}

/// Renders every row; a failing row is reported and the rest still run.
pub fn synthesize(
    synth: &Synthesizer,
    rows: &[ManifestRow],
    turn_window: usize,
    out_dir: &Path,
    gl_iters: usize,
) -> Result<Vec<std::result::Result<RowOutput, (ManifestRow, Error)>>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(rows
        .iter()
        .map(|r| {
            synth.render_row(r, turn_window, out_dir, gl_iters).map_err(|e| {
                log::error!("row {}: {e}", r.name());
                (r.clone(), e)
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub item: String,
    #[serde(rename = "T")]
    pub turn_window: usize,
    pub history_turns: usize,
    pub frames: usize,
    pub mean_duration: f64,
    pub std_duration: f64,
    /// RMS mel difference to the reference, using reference durations so frames line up.
    pub mel_rmse_reference: Option<f64>,
}

/// Objective proxies per (row, T).
pub fn sweep_t(
    synth: &Synthesizer,
    rows: &[ManifestRow],
    t_values: &[usize],
    features: Option<&FeatureCache>,
) -> Result<Vec<SweepRow>> {
    for &t in t_values {
        validate_t(t, synth.model.config.allow_any_t)?;
    }
    let mut out = Vec::new();
    for row in rows {
        for &t in t_values {
            let (ex, mel, durations) = synth.mel(row, t, features, None)?;
            let n = durations.len() as f64;
            let mean = durations.iter().map(|&d| d as f64).sum::<f64>() / n;
            let var = durations.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
            let reference = match ex.targets.as_ref().and_then(|tg| tg.durations.as_ref().map(|d| (tg, d))) {
                Some((tg, d)) => {
                    let (_, forced, _) = synth.mel(row, t, None, Some(d))?;
                    let l2 = forced.l2_distance(&tg.mel);
                    Some(l2 / ((tg.mel.data.len()) as f64).sqrt())
                }
                None => None,
            };
            out.push(SweepRow {
                item: row.name(),
                turn_window: t,
                history_turns: ex.history_turns.len(),
                frames: mel.n_frames,
                mean_duration: mean,
                std_duration: var.sqrt(),
                mel_rmse_reference: reference,
            });
        }
    }
    Ok(out)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
