use std::path::Path;

use context_tts::corpus::{load_corpus, CorpusBundle, CorpusFormat};
use context_tts::pipeline::fixture::write_tts_fixture;
use context_tts::pipeline::{
    load_tts, read_metrics, resolve_checkpoint, run_pretrain, run_tts_train, step_dir, synthesize, Checkpoint,
    FeatureCache, ManifestRow, Profile, RunConfig, Split, StageDir, Synthesizer, TtsRun,
};

const DIALOGUE: &[(usize, &str)] =
    &[(0, "Are you coming tonight?"), (1, "Maybe, I am tired."), (0, "Please come."), (1, "Okay then.")];

fn corpus(dir: &Path) -> (CorpusBundle, FeatureCache) {
    write_tts_fixture(dir, &[DIALOGUE.to_vec(), vec![(1, "Good morning."), (0, "Morning!")]]).unwrap();
    let bundle = CorpusBundle::from_loaded(load_corpus(&dir.join("dialogues.jsonl"), CorpusFormat::Jsonl).unwrap(), 64);
    let feats = FeatureCache::extract(&bundle.conversations).unwrap();
    (bundle, feats)
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::profile(Profile::Toy);
    cfg.pretrain.steps = 6;
    cfg.pretrain.log_every = 1;
    cfg.pretrain.valid_every = 3;
    cfg.pretrain.checkpoint_every = 2;
    cfg.pretrain.batch_size = 2;
    cfg.tts.steps = 4;
    cfg.tts.log_every = 1;
    cfg.tts.valid_every = 2;
    cfg.tts.checkpoint_every = 2;
    cfg
}

fn split() -> Split {
    Split { train: vec![0], valid: vec![1], test: vec![] }
}

fn row(conv: &str, turn: usize) -> ManifestRow {
    ManifestRow { conversation_id: conv.into(), turn_index: turn, id: None }
}

#[test]
fn pretrain_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = corpus(&dir.path().join("c"));
    let cfg = small_config();
    let full = run_pretrain(&cfg, &bundle, &split(), &StageDir::new(dir.path().join("full")), false).unwrap();

    let mut short = cfg.clone();
    short.pretrain.steps = 4;
    let stage = StageDir::new(dir.path().join("resumed"));
    run_pretrain(&short, &bundle, &split(), &stage, false).unwrap();
    let resumed = run_pretrain(&cfg, &bundle, &split(), &stage, true).unwrap();
    assert_eq!(resumed.meta.step, 6);
    assert_eq!(full.params, resumed.params);

    let a = read_metrics(&StageDir::new(dir.path().join("full")).metrics()).unwrap();
    let b = read_metrics(&stage.metrics()).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.step, &x.split), (y.step, &y.split));
        assert_eq!(x.values["total"].to_bits(), y.values["total"].to_bits());
    }
}

#[test]
fn metrics_are_monotone_and_old_checkpoints_pruned() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = corpus(&dir.path().join("c"));
    let stage = StageDir::new(dir.path().join("pre"));
    let mut cfg = small_config();
    cfg.pretrain.steps = 8;
    run_pretrain(&cfg, &bundle, &split(), &stage, false).unwrap();
    let records = read_metrics(&stage.metrics()).unwrap();
    let train: Vec<u64> = records.iter().filter(|r| r.split == "train").map(|r| r.step).collect();
    assert_eq!(train, (1..=8).collect::<Vec<_>>());
    assert!(records.iter().any(|r| r.split == "valid"));
    assert!(records.iter().all(|r| r.values.values().all(|v| v.is_finite())));
    let kept: Vec<_> = std::fs::read_dir(&stage.root)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.starts_with("step-"))
        .collect();
    assert_eq!(kept.len(), 3, "{kept:?}");
    assert!(!step_dir(&stage.root, 2).exists());
    assert!(step_dir(&stage.root, 4).exists() && step_dir(&stage.root, 8).exists());
}

#[test]
fn resume_rejects_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = corpus(&dir.path().join("c"));
    let stage = StageDir::new(dir.path().join("pre"));
    let cfg = small_config();
    run_pretrain(&cfg, &bundle, &split(), &stage, false).unwrap();
    let mut other = cfg.clone();
    other.pretrain.lr *= 2.0;
    other.pretrain.steps = 8;
    assert!(run_pretrain(&other, &bundle, &split(), &stage, true).is_err());
}

#[test]
fn tts_trains_with_and_without_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, feats) = corpus(&dir.path().join("c"));
    let cfg = small_config();
    let pre = run_pretrain(&cfg, &bundle, &split(), &StageDir::new(dir.path().join("pre")), false).unwrap();
    for (name, pretrained) in [("scratch", None), ("warm", Some(&pre))] {
        let stage = StageDir::new(dir.path().join(name));
        let ck = run_tts_train(&TtsRun {
            config: &cfg,
            bundle: &bundle,
            features: &feats,
            split: &split(),
            stage: &stage,
            pretrained,
            resume: false,
        })
        .unwrap();
        assert_eq!(ck.meta.step, 4);
        let records = read_metrics(&stage.metrics()).unwrap();
        let train: Vec<u64> = records.iter().filter(|r| r.split == "train").map(|r| r.step).collect();
        assert_eq!(train, vec![1, 2, 3, 4]);
        for key in ["total", "mel", "duration", "pitch", "energy"] {
            assert!(records[0].values.contains_key(key), "{name}: missing {key}");
        }
    }
}

fn trained(dir: &Path, use_context: bool) -> (CorpusBundle, Checkpoint) {
    let (bundle, feats) = corpus(&dir.join("c"));
    let mut cfg = small_config();
    cfg.tts.use_context = use_context;
    let stage = StageDir::new(dir.join("tts"));
    run_tts_train(&TtsRun {
        config: &cfg,
        bundle: &bundle,
        features: &feats,
        split: &split(),
        stage: &stage,
        pretrained: None,
        resume: false,
    })
    .unwrap();
    let ck = resolve_checkpoint(&stage.root).unwrap();
    (bundle, ck)
}

#[test]
fn context_window_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, ck) = trained(dir.path(), true);
    let (model, store, stats) = load_tts(&ck, &bundle.vocab).unwrap();
    let synth = Synthesizer::new(&model, &store, stats, &bundle);
    let conv = &bundle.conversations[0].conversation_id;
    let gt: Vec<u32> = bundle.conversations[0].turns[3].durations.clone().unwrap();

    let (ex1, m1, _) = synth.mel(&row(conv, 3), 1, None, Some(&gt)).unwrap();
    let (ex4, m4, _) = synth.mel(&row(conv, 3), 4, None, Some(&gt)).unwrap();
    let (ex8, m8, _) = synth.mel(&row(conv, 3), 8, None, Some(&gt)).unwrap();
    assert!(ex1.history_turns.is_empty());
    assert_eq!(ex4.history_turns, vec![0, 1, 2]);
    assert_eq!(ex8.history_turns, ex4.history_turns);
    assert_ne!(m1.data, m4.data);
    assert_eq!(m4.data, m8.data);

    let (ex0, _, _) = synth.mel(&row(conv, 0), 8, None, None).unwrap();
    assert!(ex0.history_turns.is_empty());
}

#[test]
fn no_context_ignores_history() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, ck) = trained(dir.path(), false);
    let (model, store, stats) = load_tts(&ck, &bundle.vocab).unwrap();
    assert!(!model.use_context());
    let synth = Synthesizer::new(&model, &store, stats, &bundle);
    let conv = &bundle.conversations[0].conversation_id;
    let (_, a, da) = synth.mel(&row(conv, 3), 1, None, None).unwrap();
    let (_, b, db) = synth.mel(&row(conv, 3), 4, None, None).unwrap();
    assert_eq!(da, db);
    assert_eq!(a.data, b.data);
}

#[test]
fn bad_rows_fail_individually() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, ck) = trained(dir.path(), true);
    let (model, store, stats) = load_tts(&ck, &bundle.vocab).unwrap();
    let synth = Synthesizer::new(&model, &store, stats, &bundle);
    let conv = bundle.conversations[0].conversation_id.clone();
    let rows = vec![row(&conv, 0), row("missing", 0), row(&conv, 99), row(&conv, 1)];
    let out = dir.path().join("out");
    let results = synthesize(&synth, &rows, 2, &out, 2).unwrap();
    let ok: Vec<bool> = results.iter().map(|r| r.is_ok()).collect();
    assert_eq!(ok, vec![true, false, false, true]);
    let first = results[0].as_ref().unwrap();
    assert!(first.wav.exists());
    let sidecar = first.wav.with_extension("json");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
    assert_eq!(meta["turn_window"], 2);
    assert_eq!(meta["history_turns"], serde_json::json!([]));
    assert!(synthesize(&synth, &rows[..1], 15, &out, 2).unwrap()[0].is_err());
}
