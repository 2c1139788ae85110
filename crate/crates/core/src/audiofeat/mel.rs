use serde::{Deserialize, Serialize};

use super::stft::{stft_magnitude, StftConfig};
use super::{Waveform, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor_archive::NamedTensor;

pub const N_MELS: usize = 80;
pub const MEL_FLOOR: f64 = 1e-5;
pub const MEL_FMAX: f64 = 8_000.0;

/// `frames × 80` natural-log mel magnitudes, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub n_frames: usize,
    pub data: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(n_frames: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self { n_frames, data };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.n_frames * N_MELS {
            return Err(Error::Shape(format!(
                "mel data has {} values, expected {} frames x {N_MELS}",
                self.data.len(),
                self.n_frames
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("mel contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * N_MELS..(i + 1) * N_MELS]
    }

    pub fn floor_value() -> f32 {
        MEL_FLOOR.ln() as f32
    }

    pub fn to_named_tensor(&self) -> NamedTensor {
        NamedTensor { shape: vec![self.n_frames, N_MELS], data: self.data.clone() }
    }

    pub fn from_named_tensor(t: &NamedTensor) -> Result<Self> {
        match t.shape.as_slice() {
            [f, N_MELS] => Self::new(*f, t.data.clone()),
            s => Err(Error::Shape(format!("expected [frames, {N_MELS}], got {s:?}"))),
        }
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        let n = self.n_frames.min(other.n_frames) * N_MELS;
        let common: f64 = self.data[..n]
            .iter()
            .zip(&other.data[..n])
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        let extra: f64 = self.data[n..].iter().chain(&other.data[n..]).map(|v| (*v as f64).powi(2)).sum();
        (common + extra).sqrt()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_hz / f_sp + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Slaney-style triangular filterbank (`N_MELS × bins`), area-normalised, 0 Hz to 8 kHz.
pub fn mel_filterbank(cfg: &StftConfig) -> Vec<Vec<f64>> {
    let nb = cfg.n_bins();
    let fft_freqs: Vec<f64> =
        (0..nb).map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64).collect();
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(MEL_FMAX));
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (r - l);
            fft_freqs
                .iter()
                .map(|&f| {
                    let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                    w * enorm
                })
                .collect()
        })
        .collect()
}

/// Centre frequency of each mel filter in Hz.
pub fn mel_centres() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(MEL_FMAX));
    (1..=N_MELS).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64)).collect()
}

/// Linear (pre-log) mel magnitudes, `frames × N_MELS`.
pub fn linear_mel(magnitude: &[Vec<f64>], fb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    magnitude
        .iter()
        .map(|col| fb.iter().map(|f| f.iter().zip(col).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

pub fn wav_to_mel(w: &Waveform) -> Result<MelSpectrogram> {
    w.validate()?;
    if w.sample_rate != TARGET_SAMPLE_RATE {
        return Err(Error::Data(format!(
            "wav_to_mel expects {TARGET_SAMPLE_RATE} Hz input, got {}; resample first",
            w.sample_rate
        )));
    }
    let cfg = StftConfig::default();
    let mag = stft_magnitude(&w.samples, &cfg)?;
    let lin = linear_mel(&mag, &mel_filterbank(&cfg));
    let n_frames = lin.len();
    let data = lin.into_iter().flatten().map(|v| v.max(MEL_FLOOR).ln() as f32).collect();
    MelSpectrogram::new(n_frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::tone;

    #[test]
    fn slaney_scale_round_trips() {
        for f in [0.0, 300.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn filterbank_covers_band() {
        let cfg = StftConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.len(), N_MELS);
        assert!(fb.iter().all(|f| f.len() == 1025 && f.iter().all(|w| *w >= 0.0)));
        // every bin strictly inside the band is touched by some filter
        let top = (MEL_FMAX * 2048.0 / 22_050.0) as usize;
        for k in 1..top {
            assert!(fb.iter().any(|f| f[k] > 0.0), "bin {k}");
        }
        for k in top + 2..1025 {
            assert!(fb.iter().all(|f| f[k] == 0.0));
        }
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let m = wav_to_mel(&Waveform::new(vec![0.0; 4000], 22_050).unwrap()).unwrap();
        assert!(m.data.iter().all(|v| *v == MelSpectrogram::floor_value()));
    }

    #[test]
    fn tone_peak_channel_is_stable() {
        let m = wav_to_mel(&tone(440.0, 0.5, 0.5, 22_050)).unwrap();
        let argmax = |f: &[f32]| {
            f.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
        };
        let first = argmax(m.frame(1));
        assert!((1..m.n_frames - 1).all(|i| argmax(m.frame(i)) == first));
        // nearest mel centre to 440 Hz
        let centres = mel_centres();
        let nearest = (0..N_MELS)
            .min_by(|&a, &b| (centres[a] - 440.0).abs().total_cmp(&(centres[b] - 440.0).abs()))
            .unwrap();
        assert!(first.abs_diff(nearest) <= 1);
    }

    #[test]
    fn rejects_wrong_rate_and_short_input() {
        assert!(wav_to_mel(&tone(440.0, 0.1, 0.5, 44_100)).is_err());
        assert!(matches!(
            wav_to_mel(&Waveform::new(vec![0.0; 1000], 22_050).unwrap()),
            Err(Error::Frame(_))
        ));
    }
}
