use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;

use super::checkpoint::{latest_checkpoint, prune_checkpoints, step_dir, Checkpoint, CheckpointMeta, RngState, Stage};
use super::config::RunConfig;
use super::features::FeatureCache;
use super::metrics::{MetricRecord, MetricsWriter};
use super::model::{mean_total, ContextTts, TtsExample};
use super::split::Split;
use crate::acoustic::{G2p, VarianceStats};
use crate::corpus::{Conversation, CorpusBundle, Vocabulary};
use crate::error::{Error, Result};
use crate::fine_context::{pretrain_step, PretrainBatcher, PretrainModel};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::{scalar_f64, Ctx, ParamStore};
use crate::rng::{derive_rng, derive_seed};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const KEEP_CHECKPOINTS: usize = 3;

/// Where a stage keeps its metrics and checkpoints.
#[derive(Debug, Clone)]
pub struct StageDir {
    pub root: PathBuf,
}

impl StageDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn latest(&self) -> Result<Option<PathBuf>> {
        latest_checkpoint(&self.root)
    }
}

fn dropout_ctx(seed: u64, stage: u64, step: u64) -> Ctx {
    Ctx::train(derive_seed(seed, &[0xD0, stage, step]))
}

/// Batch `step` of an epoch-shuffled pass over `n` items.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size.max(1)).max(1) as u64;
    let (epoch, index) = (step / per_epoch, (step % per_epoch) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, &[0x7B, epoch]));
    let start = index * batch_size;
    order[start..(start + batch_size).min(n)].to_vec()
}

fn adam_for(lr: f64, warmup_steps: u64) -> Adam {
    Adam::new(AdamConfig { lr, warmup_steps, ..Default::default() })
}

fn open_metrics(stage: &StageDir, resumed_step: Option<u64>) -> Result<MetricsWriter> {
    std::fs::create_dir_all(&stage.root).map_err(|e| Error::io(&stage.root, e))?;
    match resumed_step {
        Some(s) => MetricsWriter::resume(&stage.metrics(), s),
        None => MetricsWriter::create(&stage.metrics()),
    }
}

fn record(stage: &str, split: &str, step: u64, values: &[(&str, f64)]) -> MetricRecord {
    MetricRecord {
        stage: stage.into(),
        split: split.into(),
        step,
        values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
    }
}

fn save_checkpoint(stage: &StageDir, ck: &Checkpoint) -> Result<()> {
    ck.save(&step_dir(&stage.root, ck.meta.step))?;
    prune_checkpoints(&stage.root, KEEP_CHECKPOINTS)
}

/// Resolves the corpus-dependent sizes into the config.
pub fn resolved_config(config: &RunConfig, vocab: &Vocabulary) -> RunConfig {
    let mut c = config.clone();
    c.encoder = config.encoder_for(vocab.len());
    c.acoustic = config.acoustic_for(vocab.num_speakers());
    c
}

fn check_resume(meta: &CheckpointMeta, stage: Stage, config: &RunConfig) -> Result<()> {
    if meta.stage != stage {
        return Err(Error::Config(format!("checkpoint is from the {:?} stage", meta.stage)));
    }
    // step budgets may grow between runs; everything else must match
    let mut saved = meta.config.clone();
    saved.pretrain.steps = config.pretrain.steps;
    saved.tts.steps = config.tts.steps;
    if &saved != config {
        return Err(Error::Config("checkpoint config differs from the current run config".into()));
    }
    Ok(())
}

/// Dialogue-BERT pretraining on the train split.
pub fn run_pretrain(config: &RunConfig, bundle: &CorpusBundle, split: &Split, stage: &StageDir, resume: bool) -> Result<Checkpoint> {
    let config = resolved_config(config, &bundle.vocab);
    config.validate()?;
    let p = config.pretrain;
    let store = ParamStore::new(DType::F32, config.seed);
    let model = PretrainModel::new(&store, config.encoder)?;
    let mut opt = adam_for(p.lr, p.warmup_steps);

    let resumed = if resume { stage.latest()? } else { None };
    if let Some(dir) = &resumed {
        let ck = Checkpoint::load(dir)?;
        check_resume(&ck.meta, Stage::Pretrain, &config)?;
        store.load_archive(&ck.params)?;
        opt.load_archive(&ck.optim, &store, ck.meta.step)?;
        log::info!("resuming pretraining from step {}", ck.meta.step);
    }
    let mut metrics = open_metrics(stage, resumed.as_ref().map(|_| opt.step))?;

    let pick = |idx: &[usize]| idx.iter().map(|&i| bundle.conversations[i].clone()).collect::<Vec<_>>();
    let train = pick(&split.train);
    let valid = pick(&split.valid);
    let max_len = config.encoder.max_seq_len;
    let mut batcher = PretrainBatcher::new(&train, &bundle.vocab, max_len, p.batch_size, p.mask_prob);
    batcher.selection = p.turn_selection;
    let mut valid_batcher = PretrainBatcher::new(&valid, &bundle.vocab, max_len, p.batch_size, p.mask_prob);
    valid_batcher.selection = p.turn_selection;
    let valid_seed = derive_seed(config.seed, &[0x7A]);

    let meta = |step: u64| CheckpointMeta {
        stage: Stage::Pretrain,
        step,
        rng: RngState { seed: config.seed, next_step: step },
        config: config.clone(),
        vocab_size: bundle.vocab.len(),
        num_speakers: bundle.num_speakers(),
        variance_stats: None,
    };

    while opt.step < p.steps {
        let step = opt.step;
        let (masked, contrastive) = batcher.batch_for_step(config.seed, step)?;
        let r = pretrain_step(&model, &store, &mut opt, &masked, &contrastive, &dropout_ctx(config.seed, 0, step))?;
        let done = opt.step;
        if done % p.log_every.max(1) == 0 || done == p.steps {
            metrics.write(&record(
                "pretrain",
                "train",
                done,
                &[
                    ("total", r.total),
                    ("mlm", r.mlm),
                    ("dc", r.dc),
                    ("retrieval_accuracy", r.retrieval_accuracy),
                    ("grad_norm", r.grad_norm),
                    ("lr", opt.config.lr_at(step)),
                ],
            ))?;
        }
        if p.valid_every > 0 && done % p.valid_every == 0 && !valid_batcher.conversations.is_empty() {
            let (m, c) = valid_batcher.batch_for_step(valid_seed, 0)?;
            let (total, mlm, dc, acc) = model.losses(&m, &c, &store, &Ctx::eval())?;
            metrics.write(&record(
                "pretrain",
                "valid",
                done,
                &[("total", scalar_f64(&total)?), ("mlm", scalar_f64(&mlm)?), ("dc", scalar_f64(&dc)?), ("retrieval_accuracy", acc)],
            ))?;
        }
        if p.checkpoint_every > 0 && done % p.checkpoint_every == 0 && done < p.steps {
            save_checkpoint(stage, &Checkpoint::capture(meta(done), &store, &opt)?)?;
        }
    }
    let ck = Checkpoint::capture(meta(opt.step), &store, &opt)?;
    save_checkpoint(stage, &ck)?;
    Ok(ck)
}

/// Losses and bookkeeping for one TTS update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtsStepReport {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub align: f64,
    /// Fraction of batch items whose durations sum to the mel frame count.
    pub durations_match: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

impl TtsStepReport {
    fn values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("total", self.total),
            ("mel", self.mel),
            ("duration", self.duration),
            ("pitch", self.pitch),
            ("energy", self.energy),
            ("align", self.align),
            ("durations_match", self.durations_match),
            ("grad_norm", self.grad_norm),
            ("lr", self.lr),
        ]
    }
}

/// An example paired with the conversation it came from.
pub type Item<'a> = (&'a TtsExample, &'a Conversation);

fn batch_losses(
    model: &ContextTts,
    batch: &[Item],
    vocab: &Vocabulary,
    stats: &VarianceStats,
    store: &ParamStore,
    ctx: &Ctx,
) -> Result<(Vec<crate::acoustic::AcousticLosses>, TtsStepReport)> {
    let losses = batch
        .iter()
        .map(|(ex, conv)| model.losses(ex, conv, vocab, stats, store, ctx))
        .collect::<Result<Vec<_>>>()?;
    let n = losses.len() as f64;
    let mut sums = [0f64; 6];
    let mut matched = 0usize;
    for (l, (ex, _)) in losses.iter().zip(batch) {
        for (s, v) in sums.iter_mut().zip(l.values()?) {
            *s += v;
        }
        let frames = ex.targets.as_ref().map_or(0, |t| t.mel.n_frames as u64);
        if l.durations.iter().map(|&d| d as u64).sum::<u64>() == frames {
            matched += 1;
        }
    }
    let report = TtsStepReport {
        total: sums[0] / n,
        mel: sums[1] / n,
        duration: sums[2] / n,
        pitch: sums[3] / n,
        energy: sums[4] / n,
        align: sums[5] / n,
        durations_match: matched as f64 / n,
        grad_norm: 0.0,
        lr: 0.0,
    };
    Ok((losses, report))
}

/// One optimizer update on the batch's mean total loss.
pub fn tts_step(
    model: &ContextTts,
    store: &ParamStore,
    opt: &mut Adam,
    batch: &[Item],
    vocab: &Vocabulary,
    stats: &VarianceStats,
    ctx: &Ctx,
) -> Result<TtsStepReport> {
    let (losses, mut report) = batch_losses(model, batch, vocab, stats, store, ctx)?;
    let total = mean_total(&losses)?;
    if !report.total.is_finite() {
        let ids: Vec<String> = batch.iter().map(|(e, _)| format!("{}:{}", e.conversation_id, e.turn_index)).collect();
        return Err(Error::NonFiniteLoss { step: opt.step, detail: format!("batch {ids:?}") });
    }
    let grads = total.backward()?;
    let r = opt.step(store, &grads)?;
    report.grad_norm = r.grad_norm;
    report.lr = r.lr;
    Ok(report)
}

/// Evaluation-mode losses averaged over `items`.
pub fn tts_eval(model: &ContextTts, store: &ParamStore, items: &[Item], vocab: &Vocabulary, stats: &VarianceStats) -> Result<TtsStepReport> {
    batch_losses(model, items, vocab, stats, store, &Ctx::eval()).map(|(_, r)| r)
}

/// Examples for every turn with cached features in the listed conversations.
pub fn prepare_examples(
    model: &ContextTts,
    conversations: &[&Conversation],
    turn_window: usize,
    vocab: &Vocabulary,
    g2p: &G2p,
    features: &FeatureCache,
) -> Result<Vec<TtsExample>> {
    let mut out = Vec::new();
    for conv in conversations {
        for t in 0..conv.turns.len() {
            if features.get(&conv.conversation_id, conv.turns[t].turn_index).is_some() {
                out.push(model.prepare(conv, t, turn_window, vocab, g2p, Some(features))?);
            }
        }
    }
    Ok(out)
}

pub fn pair_with_conversations<'a>(examples: &'a [TtsExample], bundle: &'a CorpusBundle) -> Result<Vec<Item<'a>>> {
    examples
        .iter()
        .map(|e| {
            let conv = bundle
                .conversation(&e.conversation_id)
                .ok_or_else(|| Error::Data(format!("unknown conversation {}", e.conversation_id)))?;
            Ok((e, conv))
        })
        .collect()
}

/// Inputs of a TTS training run.
pub struct TtsRun<'a> {
    pub config: &'a RunConfig,
    pub bundle: &'a CorpusBundle,
    pub features: &'a FeatureCache,
    pub split: &'a Split,
    pub stage: &'a StageDir,
    /// Pretraining checkpoint; without one the fine encoder starts from random weights.
    pub pretrained: Option<&'a Checkpoint>,
    pub resume: bool,
}

/// Builds a model from a TTS checkpoint.
pub fn load_tts(ck: &Checkpoint, vocab: &Vocabulary) -> Result<(ContextTts, ParamStore, VarianceStats)> {
    if ck.meta.stage != Stage::Tts {
        return Err(Error::Config("not a TTS checkpoint".into()));
    }
    if ck.meta.vocab_size != vocab.len() || ck.meta.num_speakers != vocab.num_speakers() {
        return Err(Error::Config("checkpoint was trained on a different corpus vocabulary".into()));
    }
    let stats = ck
        .meta
        .variance_stats
        .ok_or_else(|| Error::Config("TTS checkpoint lacks variance statistics".into()))?;
    let store = ParamStore::new(DType::F32, ck.meta.config.seed);
    let model = ContextTts::new(&store, ck.meta.config.clone())?;
    store.load_archive(&ck.params)?;
    Ok((model, store, stats))
}

pub fn run_tts_train(run: &TtsRun) -> Result<Checkpoint> {
    let bundle = run.bundle;
    let config = resolved_config(run.config, &bundle.vocab);
    config.validate()?;
    let s = config.tts;
    let g2p = G2p::bundled();
    let store = ParamStore::new(DType::F32, config.seed);
    let model = ContextTts::new(&store, config.clone())?;
    if let Some(p) = run.pretrained {
        if p.meta.stage != Stage::Pretrain || p.meta.vocab_size != bundle.vocab.len() {
            return Err(Error::Config("pretraining checkpoint does not match this corpus".into()));
        }
        model.load_pretrained(&store, &p.params)?;
    }
    let mut opt = adam_for(s.lr, s.warmup_steps);

    let convs = |idx: &[usize]| idx.iter().map(|&i| &bundle.conversations[i]).collect::<Vec<_>>();
    let (train_c, valid_c) = (convs(&run.split.train), convs(&run.split.valid));
    let train = prepare_examples(&model, &train_c, config.turn_window, &bundle.vocab, &g2p, run.features)?;
    let valid = prepare_examples(&model, &valid_c, config.turn_window, &bundle.vocab, &g2p, run.features)?;
    if train.is_empty() {
        return Err(Error::Data("no training turns have audio features".into()));
    }
    let stats = run.features.stats(train.iter().map(|e| (e.conversation_id.clone(), e.turn_index)).collect::<Vec<_>>().iter())?;

    let resumed = if run.resume { run.stage.latest()? } else { None };
    if let Some(dir) = &resumed {
        let ck = Checkpoint::load(dir)?;
        check_resume(&ck.meta, Stage::Tts, &config)?;
        store.load_archive(&ck.params)?;
        opt.load_archive(&ck.optim, &store, ck.meta.step)?;
        log::info!("resuming TTS training from step {}", ck.meta.step);
    }
    let mut metrics = open_metrics(run.stage, resumed.as_ref().map(|_| opt.step))?;

    let train_items = pair_with_conversations(&train, bundle)?;
    let valid_items = pair_with_conversations(&valid, bundle)?;
    let meta = |step: u64| CheckpointMeta {
        stage: Stage::Tts,
        step,
        rng: RngState { seed: config.seed, next_step: step },
        config: config.clone(),
        vocab_size: bundle.vocab.len(),
        num_speakers: bundle.num_speakers(),
        variance_stats: Some(stats),
    };

    while opt.step < s.steps {
        let step = opt.step;
        let batch: Vec<Item> = batch_indices(train_items.len(), s.batch_size, config.seed, step)
            .into_iter()
            .map(|i| train_items[i])
            .collect();
        let r = tts_step(&model, &store, &mut opt, &batch, &bundle.vocab, &stats, &dropout_ctx(config.seed, 1, step))?;
        let done = opt.step;
        if done % s.log_every.max(1) == 0 || done == s.steps {
            metrics.write(&record("tts", "train", done, &r.values()))?;
        }
        if s.valid_every > 0 && done % s.valid_every == 0 && !valid_items.is_empty() {
            let v = tts_eval(&model, &store, &valid_items, &bundle.vocab, &stats)?;
            metrics.write(&record("tts", "valid", done, &v.values()[..7]))?;
        }
        if s.checkpoint_every > 0 && done % s.checkpoint_every == 0 && done < s.steps {
            save_checkpoint(run.stage, &Checkpoint::capture(meta(done), &store, &opt)?)?;
        }
    }
    let ck = Checkpoint::capture(meta(opt.step), &store, &opt)?;
    save_checkpoint(run.stage, &ck)?;
    Ok(ck)
}

/// Loads the newest checkpoint under `dir`, or `dir` itself when it is a checkpoint.
pub fn resolve_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if dir.join(super::checkpoint::META_FILE).exists() {
        return Checkpoint::load(dir);
    }
    let latest = latest_checkpoint(dir)?
        .ok_or_else(|| Error::Data(format!("no checkpoint under {}", dir.display())))?;
    Checkpoint::load(&latest)
}
