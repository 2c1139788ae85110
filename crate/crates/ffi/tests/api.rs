use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use context_tts::audiofeat::{tone, wav_to_mel, TARGET_SAMPLE_RATE};
use context_tts::corpus::{load_corpus, CorpusBundle, CorpusFormat};
use context_tts::pipeline::fixture::write_tts_fixture;
use context_tts::pipeline::{
    load_tts, resolve_checkpoint, run_tts_train, FeatureCache, ManifestRow, Profile, RunConfig, RunLayout, Split,
    StageDir, Synthesizer, TtsRun,
};
use context_tts_ffi::*;

fn last_error() -> String {
    let p = ctts_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// A run directory with a corpus and a briefly trained TTS stage.
fn trained_run(root: &Path) -> (RunLayout, CorpusBundle) {
    let corpus = root.join("corpus");
    write_tts_fixture(&corpus, &[vec![(0, "Hello there."), (1, "Hi, how are you?"), (0, "Fine, thanks.")]]).unwrap();
    let bundle =
        CorpusBundle::from_loaded(load_corpus(&corpus.join("dialogues.jsonl"), CorpusFormat::Jsonl).unwrap(), 64);
    let feats = FeatureCache::extract(&bundle.conversations).unwrap();
    let layout = RunLayout::new(root.join("run"));
    std::fs::create_dir_all(layout.root()).unwrap();
    bundle.save(&layout.corpus()).unwrap();
    let mut cfg = RunConfig::profile(Profile::Toy);
    cfg.tts.steps = 3;
    cfg.tts.valid_every = 0;
    let split = Split { train: vec![0], valid: vec![], test: vec![] };
    run_tts_train(&TtsRun {
        config: &cfg,
        bundle: &bundle,
        features: &feats,
        split: &split,
        stage: &StageDir::new(layout.tts()),
        pretrained: None,
        resume: false,
    })
    .unwrap();
    (layout, bundle)
}

#[test]
fn null_arguments_are_reported() {
    let mut mel = ptr::null_mut();
    unsafe {
        assert_eq!(ctts_wav_to_mel(ptr::null(), 4, 22050, &mut mel), CttsStatus::NullArgument);
        assert!(mel.is_null());
        assert!(last_error().contains("samples"));
        assert_eq!(ctts_wav_to_mel([0f32; 4].as_ptr(), 4, 22050, ptr::null_mut()), CttsStatus::NullArgument);
        assert_eq!(ctts_mel_frames(ptr::null()), 0);
        assert!(ctts_mel_data(ptr::null()).is_null());
        ctts_mel_free(ptr::null_mut());
        let mut model = ptr::null_mut();
        assert_eq!(ctts_model_open(ptr::null(), ptr::null(), &mut model), CttsStatus::NullArgument);
        let conv = CString::new("c").unwrap();
        assert_eq!(ctts_synthesize_mel(ptr::null(), conv.as_ptr(), 0, 1, &mut mel), CttsStatus::NullArgument);
    }
}

#[test]
fn invalid_utf8_path() {
    let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
    let mut model = ptr::null_mut();
    let s = unsafe { ctts_model_open(bad.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(s, CttsStatus::InvalidUtf8);
    assert!(model.is_null());
}

#[test]
fn wav_to_mel_matches_library() {
    let w = tone(330.0, 0.5, 0.4, TARGET_SAMPLE_RATE);
    let expected = wav_to_mel(&w).unwrap();
    let mut mel = ptr::null_mut();
    unsafe {
        assert_eq!(ctts_wav_to_mel(w.samples.as_ptr(), w.samples.len(), w.sample_rate, &mut mel), CttsStatus::Ok);
        let frames = ctts_mel_frames(mel);
        assert_eq!(frames, expected.n_frames);
        let data = std::slice::from_raw_parts(ctts_mel_data(mel), frames * ctts_mel_channels());
        assert_eq!(data, &expected.data[..]);

        let mut audio = ptr::null_mut();
        assert_eq!(ctts_griffin_lim(mel, 4, 1, &mut audio), CttsStatus::Ok);
        assert_eq!(ctts_audio_sample_rate(audio), TARGET_SAMPLE_RATE);
        let n = ctts_audio_len(audio);
        assert!(n > 0);
        let samples = std::slice::from_raw_parts(ctts_audio_samples(audio), n);
        assert!(samples.iter().all(|x| x.is_finite()));
        ctts_audio_free(audio);
        ctts_mel_free(mel);
    }
}

#[test]
fn unsupported_rate_is_a_data_error() {
    let mut mel = ptr::null_mut();
    let x = [0f32; 1000];
    assert_eq!(unsafe { ctts_wav_to_mel(x.as_ptr(), x.len(), 8000, &mut mel) }, CttsStatus::Data);
    assert!(last_error().contains("8000"));
}

#[test]
fn checks_pass() {
    let (mut passed, mut total) = (0, 0);
    assert_eq!(unsafe { ctts_run_checks(&mut passed, &mut total) }, CttsStatus::Ok);
    assert!(total > 0);
    assert_eq!(passed, total);
}

#[test]
fn model_synthesis_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, bundle) = trained_run(dir.path());
    let run = CString::new(layout.root().to_str().unwrap()).unwrap();
    let conv_id = bundle.conversations[0].conversation_id.clone();
    let conv = CString::new(conv_id.clone()).unwrap();

    let (model, store, stats) = load_tts(&resolve_checkpoint(&layout.tts()).unwrap(), &bundle.vocab).unwrap();
    let synth = Synthesizer::new(&model, &store, stats, &bundle);
    let (_, expected, _) =
        synth.mel(&ManifestRow { conversation_id: conv_id, turn_index: 2, id: None }, 2, None, None).unwrap();

    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ctts_model_open(run.as_ptr(), ptr::null(), &mut h), CttsStatus::Ok, "{}", last_error());
        let mut mel = ptr::null_mut();
        assert_eq!(ctts_synthesize_mel(h, conv.as_ptr(), 2, 2, &mut mel), CttsStatus::Ok, "{}", last_error());
        let frames = ctts_mel_frames(mel);
        assert_eq!(frames, expected.n_frames);
        let data = std::slice::from_raw_parts(ctts_mel_data(mel), frames * 80);
        assert_eq!(data, &expected.data[..]);
        ctts_mel_free(mel);

        let mut none = ptr::null_mut();
        assert_eq!(ctts_synthesize_mel(h, conv.as_ptr(), 2, 15, &mut none), CttsStatus::Config);
        assert!(none.is_null());
        let missing = CString::new("no-such-conversation").unwrap();
        assert_ne!(ctts_synthesize_mel(h, missing.as_ptr(), 0, 1, &mut none), CttsStatus::Ok);
        assert!(none.is_null());

        let wav = dir.path().join("out.wav");
        let mut audio = ptr::null_mut();
        let mut mel = ptr::null_mut();
        assert_eq!(ctts_synthesize_mel(h, conv.as_ptr(), 0, 1, &mut mel), CttsStatus::Ok);
        assert_eq!(ctts_griffin_lim(mel, 2, 0, &mut audio), CttsStatus::Ok);
        let path = CString::new(wav.to_str().unwrap()).unwrap();
        assert_eq!(ctts_audio_write_wav(audio, path.as_ptr()), CttsStatus::Ok);
        assert!(wav.exists());
        ctts_audio_free(audio);
        ctts_mel_free(mel);
        ctts_model_free(h);
    }
}

fn cdylib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    let found = [deps.parent()?, deps].into_iter().find(|d| d.join("libcontext_tts_ffi.so").exists());
    found.map(Path::to_path_buf)
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Some(lib_dir) = cdylib_dir() else {
        panic!("libcontext_tts_ffi.so not found next to {:?}", std::env::current_exe());
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Werror", "-D_DEFAULT_SOURCE"])
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lcontext_tts_ffi", "-lm"])
        .status()
        .expect("C compiler runs");
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
