use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig};
use super::{Waveform, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 600.0;
const VOICING_THRESHOLD: f64 = 0.5;
const SILENCE_RMS: f64 = 1e-3;

/// Per-frame log-F0 (0 where unvoiced) and STFT-column L2 energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchEnergy {
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

/// Normalised autocorrelation at lag `tau`.
fn nacf(x: &[f64], tau: usize) -> f64 {
    let n = x.len() - tau;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        xy += x[i] * x[i + tau];
        xx += x[i] * x[i];
        yy += x[i + tau] * x[i + tau];
    }
    let d = (xx * yy).sqrt();
    if d > 0.0 {
        xy / d
    } else {
        0.0
    }
}

/// F0 in Hz of one frame, or `None` when unvoiced.
pub fn frame_f0(frame: &[f32], sample_rate: u32) -> Option<f64> {
    let mean = frame.iter().map(|v| *v as f64).sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| *v as f64 - mean).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms < SILENCE_RMS {
        return None;
    }
    let sr = sample_rate as f64;
    let lo = (sr / F0_MAX).floor() as usize;
    let hi = ((sr / F0_MIN).ceil() as usize).min(x.len() / 2);
    if lo + 2 >= hi {
        return None;
    }
    let r: Vec<f64> = (lo - 1..=hi + 1).map(|t| nacf(&x, t)).collect();
    let at = |t: usize| r[t + 1 - lo];
    let best = (lo..=hi).map(at).fold(f64::MIN, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    // the first strong local peak avoids octave errors at multiples of the period
    let tau = (lo..=hi).find(|&t| at(t) >= 0.9 * best && at(t) >= at(t - 1) && at(t) >= at(t + 1))?;
    let (a, b, c) = (at(tau - 1), at(tau), at(tau + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(sr / (tau as f64 + shift))
}

pub fn extract_pitch_energy(w: &Waveform, cfg: &StftConfig) -> Result<PitchEnergy> {
    w.validate()?;
    if w.sample_rate != TARGET_SAMPLE_RATE {
        return Err(Error::Data(format!("pitch extraction expects {TARGET_SAMPLE_RATE} Hz input")));
    }
    let frames = cfg.num_frames(w.samples.len())?;
    let pitch = (0..frames)
        .map(|f| {
            let s = f * cfg.hop_length;
            frame_f0(&w.samples[s..s + cfg.win_length], w.sample_rate).map_or(0.0, |hz| hz.ln() as f32)
        })
        .collect();
    let energy = stft(&w.samples, cfg)?
        .iter()
        .map(|col| col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() as f32)
        .collect();
    Ok(PitchEnergy { pitch, energy })
}
