//! Synthetic speech-like fixtures: each phoneme becomes a harmonic tone held for a known
//! number of frames, so durations, pitch and mel targets are all known in advance.

use std::path::Path;

use serde_json::json;

use crate::acoustic::{G2p, PhonemeInventory, PhonemeSequence};
use crate::audiofeat::{write_wav, StftConfig, Waveform, TARGET_SAMPLE_RATE};
use crate::corpus::split_words;
use crate::error::{Error, Result};

/// Fundamental frequency used for a phoneme id and speaker, or `None` for silence.
pub fn phoneme_f0(id: u32, speaker: usize) -> Option<f64> {
    let sym = PhonemeInventory::standard().symbol(id)?;
    if sym.chars().all(|c| c.is_ascii_punctuation()) || sym == crate::acoustic::SPOKEN_NOISE {
        return None;
    }
    Some((110.0 + 9.0 * (id % 37) as f64) * if speaker % 2 == 1 { 1.3 } else { 1.0 })
}

/// Deterministic per-phoneme frame counts in 3..=7.
pub fn fixture_durations(seq: &PhonemeSequence) -> Vec<u32> {
    seq.ids.iter().enumerate().map(|(j, &id)| 3 + (id as u32 * 7 + j as u32) % 5).collect()
}

/// Renders the phonemes with the given durations on the analysis frame grid.
pub fn render(seq: &PhonemeSequence, durations: &[u32], speaker: usize) -> Result<Waveform> {
    if durations.len() != seq.len() {
        return Err(Error::Shape("one duration per phoneme required".into()));
    }
    let cfg = StftConfig::default();
    let frames: u32 = durations.iter().sum();
    let n = cfg.num_samples(frames as usize);
    let sr = TARGET_SAMPLE_RATE as f64;
    let mut samples = vec![0f32; n];
    let mut start_frame = 0usize;
    for (j, (&id, &d)) in seq.ids.iter().zip(durations).enumerate() {
        let s = start_frame * cfg.hop_length;
        let e = if j + 1 == seq.len() { n } else { (start_frame + d as usize) * cfg.hop_length };
        if let Some(f0) = phoneme_f0(id, speaker) {
            for (i, out) in samples[s..e].iter_mut().enumerate() {
                let t = (s + i) as f64 / sr;
                let w = 2.0 * std::f64::consts::PI * f0 * t;
                *out = (0.3 * w.sin() + 0.12 * (2.0 * w).sin() + 0.05 * (3.0 * w).sin()) as f32;
            }
        }
        start_frame += d as usize;
    }
    Waveform::new(samples, TARGET_SAMPLE_RATE)
}

/// Writes `dialogues.jsonl` plus one wav per turn, with phonemes and durations recorded.
pub fn write_tts_fixture<S: AsRef<str>>(dir: &Path, dialogues: &[Vec<(usize, S)>]) -> Result<()> {
    std::fs::create_dir_all(dir.join("wav")).map_err(|e| Error::io(dir, e))?;
    let g2p = G2p::bundled();
    let mut lines = Vec::new();
    for (c, turns) in dialogues.iter().enumerate() {
        let mut out_turns = Vec::new();
        for (t, (spk, text)) in turns.iter().enumerate() {
            let words = split_words(text.as_ref());
            let symbols = g2p.words(&words);
            let seq = PhonemeSequence::from_symbols(&symbols)?;
            let durations = fixture_durations(&seq);
            let rel = format!("wav/c{c:02}_t{t:02}.wav");
            write_wav(&dir.join(&rel), &render(&seq, &durations, *spk)?)?;
            out_turns.push(json!({
                "speaker": spk,
                "text": text.as_ref(),
                "audio": rel,
                "phonemes": symbols,
                "durations": durations,
            }));
        }
        lines.push(json!({ "id": format!("tts{c:02}"), "turns": out_turns }).to_string());
    }
    let path = dir.join("dialogues.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))
}

/// Two short two-speaker conversations.
pub fn default_tts_dialogues() -> Vec<Vec<(usize, &'static str)>> {
    vec![
        vec![(0, "Did you see the game?"), (1, "Yes, we won!"), (0, "That is great.")],
        vec![(1, "Is it cold?"), (0, "No, it is hot."), (1, "I want tea.")],
    ]
}

/// The bundled eight-dialogue text fixture as (speaker, text) turns.
pub fn bundled_dialogues() -> Result<Vec<Vec<(usize, String)>>> {
    #[derive(serde::Deserialize)]
    struct RawTurn {
        speaker: usize,
        text: String,
    }
    #[derive(serde::Deserialize)]
    struct RawDialogue {
        turns: Vec<RawTurn>,
    }
    include_str!("../../fixtures/dialogues.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let d: RawDialogue =
                serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            Ok(d.turns.into_iter().map(|t| (t.speaker, t.text)).collect())
        })
        .collect()
}
