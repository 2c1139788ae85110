use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_context-tts")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_verb_passes() {
    let out = ok(&["check"]);
    assert!(out.lines().count() >= 6);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn end_to_end_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let (fixture, run, synth, sweep) =
        (dir.path().join("fx"), dir.path().join("run"), dir.path().join("synth"), dir.path().join("sweep.csv"));
    let config = dir.path().join("fast.toml");
    std::fs::write(
        &config,
        "[pretrain]\nsteps = 2\nbatch_size = 2\nvalid_every = 0\ncheckpoint_every = 0\n\
         [tts]\nsteps = 2\nvalid_every = 0\ncheckpoint_every = 0\n[synth]\ngriffin_lim_iters = 2\n",
    )
    .unwrap();

    ok(&["make-fixture", "--out", s(&fixture), "--kind", "dialogues"]);
    let report = ok(&["--config", s(&config), "ingest", "--corpus", s(&fixture), "--run", s(&run)]);
    assert!(report.contains("8 conversations"), "{report}");
    for f in ["corpus.bin", "features.ntar", "split.json", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    ok(&["pretrain", "--run", s(&run)]);
    ok(&["train", "--run", s(&run)]);
    assert!(run.join("tts/metrics.jsonl").exists());

    let manifest = dir.path().join("rows.jsonl");
    std::fs::write(
        &manifest,
        "{\"conversation_id\": \"tts00\", \"turn_index\": 0}\n{\"conversation_id\": \"tts00\", \"turn_index\": 1, \"id\": \"b\"}\n",
    )
    .unwrap();
    let listed = ok(&["--T", "3", "synth", "--run", s(&run), "--manifest", s(&manifest), "--out", s(&synth)]);
    assert_eq!(listed.lines().count(), 2);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(synth.join("tts00_t000_T03.json")).unwrap()).unwrap();
    assert_eq!(sidecar["turn_window"], 3);
    assert!(synth.join("tts00_t000_T03.wav").exists());
    assert!(synth.join("tts00_t000_T03.mel.ntar").exists());

    ok(&["sweep-t", "--run", s(&run), "--manifest", s(&manifest), "--T-values", "1,2", "--out", s(&sweep)]);
    let mut reader = csv::Reader::from_path(&sweep).unwrap();
    assert!(reader.headers().unwrap().iter().any(|h| h == "T"));
    assert_eq!(reader.records().count(), 4);

    for bad in ["0", "15"] {
        let out = cli(&["--T", bad, "synth", "--run", s(&run), "--manifest", s(&manifest), "--out", s(&synth)]);
        assert!(!out.status.success(), "T = {bad} accepted");
    }
    let missing = dir.path().join("missing.jsonl");
    std::fs::write(&missing, "{\"conversation_id\": \"nope\", \"turn_index\": 0}\n").unwrap();
    let out = cli(&["synth", "--run", s(&run), "--manifest", s(&missing), "--out", s(&synth)]);
    assert!(!out.status.success());
}

#[test]
fn ingest_rejects_missing_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["ingest", "--corpus", s(&dir.path().join("none")), "--run", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
