//! C ABI over the audio frontend, Griffin-Lim and checkpoint-based synthesis.
//!
//! Every function returns a [`CttsStatus`]; on failure the message is available from
//! [`ctts_last_error`] on the same thread. Handles are opaque, owned by the caller and
//! released with the matching `*_free` function. A model handle must not be shared
//! between threads without external locking.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use context_tts::acoustic::VarianceStats;
use context_tts::audiofeat::{griffin_lim, resample_to_target, wav_to_mel, write_wav, GriffinLim, MelSpectrogram, Waveform, N_MELS};
use context_tts::corpus::CorpusBundle;
use context_tts::error::Error;
use context_tts::nn::ParamStore;
use context_tts::pipeline::{load_tts, resolve_checkpoint, run_checks, validate_t, ContextTts, ManifestRow, RunLayout, Synthesizer};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CttsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Data = 5,
    Validation = 6,
    Numeric = 7,
    Panic = 8,
}

/// A loaded TTS checkpoint together with its corpus.
pub struct CttsModel {
    bundle: CorpusBundle,
    model: ContextTts,
    store: ParamStore,
    stats: VarianceStats,
}

/// Row-major `frames × 80` log-mel matrix.
pub struct CttsMel {
    mel: MelSpectrogram,
}

/// Mono waveform samples.
pub struct CttsAudio {
    wave: Waveform,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CttsStatus {
    match e {
        Error::Io { .. } => CttsStatus::Io,
        Error::Config(_) => CttsStatus::Config,
        Error::Parse { .. } | Error::Data(_) | Error::Archive(_) | Error::Json(_) => CttsStatus::Data,
        Error::NonFiniteLoss { .. } | Error::Tensor(_) => CttsStatus::Numeric,
        _ => CttsStatus::Validation,
    }
}

struct Fail(CttsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CttsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CttsStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CttsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CttsStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CttsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ctts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens the newest TTS checkpoint of a run directory, or `checkpoint` when it is non-NULL.
///
/// # Safety
/// `run_dir` and `checkpoint` (when non-NULL) must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctts_model_open(
    run_dir: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut CttsModel,
) -> CttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let layout = RunLayout::new(str_arg(run_dir, "run_dir")?);
        let ck_dir = if checkpoint.is_null() { layout.tts() } else { PathBuf::from(str_arg(checkpoint, "checkpoint")?) };
        let bundle = CorpusBundle::load(&layout.corpus())?;
        let ck = resolve_checkpoint(&ck_dir)?;
        let (model, store, stats) = load_tts(&ck, &bundle.vocab)?;
        *out = Box::into_raw(Box::new(CttsModel { bundle, model, store, stats }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`ctts_model_open`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ctts_model_free(model: *mut CttsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Synthesizes the mel spectrogram of one corpus turn with a turn window of `turn_window`.
///
/// # Safety
/// `model` must be a live handle, `conversation_id` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctts_synthesize_mel(
    model: *const CttsModel,
    conversation_id: *const c_char,
    turn_index: u32,
    turn_window: u32,
    out: *mut *mut CttsMel,
) -> CttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = handle(model, "model")?;
        let row = ManifestRow {
            conversation_id: str_arg(conversation_id, "conversation_id")?.to_string(),
            turn_index: turn_index as usize,
            id: None,
        };
        validate_t(turn_window as usize, m.model.config.allow_any_t)?;
        let synth = Synthesizer::new(&m.model, &m.store, m.stats, &m.bundle);
        let (_, mel, _) = synth.mel(&row, turn_window as usize, None, None)?;
        *out = Box::into_raw(Box::new(CttsMel { mel }));
        Ok(())
    })
}

/// Log-mel spectrogram of mono samples at 22050 or 44100 Hz (the latter is resampled first).
///
/// # Safety
/// `samples` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctts_wav_to_mel(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut CttsMel,
) -> CttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if samples.is_null() {
            return Err(null("samples"));
        }
        let wave = Waveform::new(std::slice::from_raw_parts(samples, len).to_vec(), sample_rate)?;
        let mel = wav_to_mel(&resample_to_target(&wave)?)?;
        *out = Box::into_raw(Box::new(CttsMel { mel }));
        Ok(())
    })
}

/// Number of frames of a mel handle (0 for NULL).
///
/// # Safety
/// `mel` must be NULL or a live mel handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_mel_frames(mel: *const CttsMel) -> usize {
    mel.as_ref().map_or(0, |m| m.mel.n_frames)
}

/// Channels per frame, always 80.
#[no_mangle]
pub extern "C" fn ctts_mel_channels() -> usize {
    N_MELS
}

/// Pointer to `frames × 80` floats owned by the handle (NULL for NULL).
///
/// # Safety
/// `mel` must be NULL or a live mel handle; the pointer dies with the handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_mel_data(mel: *const CttsMel) -> *const f32 {
    mel.as_ref().map_or(ptr::null(), |m| m.mel.data.as_ptr())
}

/// # Safety
/// `mel` must be NULL or a live mel handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_mel_free(mel: *mut CttsMel) {
    if !mel.is_null() {
        drop(Box::from_raw(mel));
    }
}

/// Griffin-Lim reconstruction at 22050 Hz, peak-normalised.
///
/// # Safety
/// `mel` must be a live mel handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctts_griffin_lim(
    mel: *const CttsMel,
    iterations: u32,
    seed: u64,
    out: *mut *mut CttsAudio,
) -> CttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = handle(mel, "mel")?;
        let r = griffin_lim(&m.mel, &GriffinLim { iterations: iterations as usize, seed })?;
        *out = Box::into_raw(Box::new(CttsAudio { wave: r.waveform }));
        Ok(())
    })
}

/// # Safety
/// `audio` must be NULL or a live audio handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_audio_len(audio: *const CttsAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.wave.samples.len())
}

/// # Safety
/// `audio` must be NULL or a live audio handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_audio_sample_rate(audio: *const CttsAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.wave.sample_rate)
}

/// # Safety
/// `audio` must be NULL or a live audio handle; the pointer dies with the handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_audio_samples(audio: *const CttsAudio) -> *const f32 {
    audio.as_ref().map_or(ptr::null(), |a| a.wave.samples.as_ptr())
}

/// Writes the audio as 16-bit mono PCM.
///
/// # Safety
/// `audio` must be a live audio handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctts_audio_write_wav(audio: *const CttsAudio, path: *const c_char) -> CttsStatus {
    guard(|| {
        let a = handle(audio, "audio")?;
        write_wav(std::path::Path::new(str_arg(path, "path")?), &a.wave)?;
        Ok(())
    })
}

/// # Safety
/// `audio` must be NULL or a live audio handle.
#[no_mangle]
pub unsafe extern "C" fn ctts_audio_free(audio: *mut CttsAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Runs the built-in property checks; `CTTS_STATUS_VALIDATION` when any fails.
///
/// # Safety
/// `passed` and `total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctts_run_checks(passed: *mut u32, total: *mut u32) -> CttsStatus {
    guard(|| {
        let passed = out_arg(passed, "passed")?;
        let total = out_arg(total, "total")?;
        let results = run_checks();
        *total = results.len() as u32;
        *passed = results.iter().filter(|r| r.passed).count() as u32;
        let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.name, r.detail)).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Fail(CttsStatus::Validation, failed.join("; ")))
        }
    })
}
