use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rustfft::num_complex::Complex;

use super::mel::{mel_filterbank, MelSpectrogram, N_MELS};
use super::stft::{istft, stft, StftConfig};
use super::{Waveform, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

pub const OUTPUT_PEAK: f32 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GriffinLim {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self { iterations: 60, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// Peak amplitude before normalisation to [`OUTPUT_PEAK`].
    pub raw_peak: f32,
    /// Spectral convergence after each iteration.
    pub convergence: Vec<f64>,
}

fn filterbank_pinv() -> &'static DMatrix<f64> {
    static PINV: OnceLock<DMatrix<f64>> = OnceLock::new();
    PINV.get_or_init(|| {
        let cfg = StftConfig::default();
        let fb = mel_filterbank(&cfg);
        let m = DMatrix::from_fn(N_MELS, cfg.n_bins(), |i, j| fb[i][j]);
        m.pseudo_inverse(1e-10).expect("filterbank SVD")
    })
}

/// `‖S − |X|‖_F / ‖S‖_F`.
pub fn spectral_convergence(target: &[Vec<f64>], estimate: &[Vec<Complex<f64>>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (s, x) in target.iter().zip(estimate) {
        for (a, b) in s.iter().zip(x) {
            num += (a - b.norm()).powi(2);
            den += a * a;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Linear magnitude estimate from a log-mel spectrogram via the filterbank pseudo-inverse.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let pinv = filterbank_pinv();
    (0..mel.n_frames)
        .map(|f| {
            let e = nalgebra::DVector::from_iterator(N_MELS, mel.frame(f).iter().map(|v| (*v as f64).exp()));
            (pinv * e).iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

pub fn griffin_lim(mel: &MelSpectrogram, gl: &GriffinLim) -> Result<GriffinLimOutput> {
    mel.validate()?;
    if gl.iterations == 0 {
        return Err(Error::Validation("griffin-lim needs at least one iteration".into()));
    }
    if mel.n_frames == 0 {
        return Err(Error::Frame("empty mel spectrogram".into()));
    }
    let cfg = StftConfig::default();
    let target = mel_to_linear(mel);
    let mut rng = derive_rng(gl.seed, &[0x6c]);
    let mut spec: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|row| row.iter().map(|&a| Complex::from_polar(a, rng.random_range(-PI..PI))).collect())
        .collect();
    let mut convergence = Vec::with_capacity(gl.iterations);
    for _ in 0..gl.iterations {
        let signal = istft(&spec, &cfg);
        let rebuilt = stft(&signal, &cfg)?;
        convergence.push(spectral_convergence(&target, &rebuilt));
        for (row, (s, x)) in spec.iter_mut().zip(target.iter().zip(&rebuilt)) {
            for (c, (a, b)) in row.iter_mut().zip(s.iter().zip(x)) {
                let n = b.norm();
                *c = if n > 0.0 { b * (*a / n) } else { Complex::new(*a, 0.0) };
            }
        }
    }
    // the last phase update is folded into the output signal
    let mut signal = istft(&spec, &cfg);
    let raw_peak = signal.iter().fold(0f32, |m, s| m.max(s.abs()));
    if raw_peak > 0.0 {
        let g = OUTPUT_PEAK / raw_peak;
        signal.iter_mut().for_each(|s| *s *= g);
    }
    Ok(GriffinLimOutput { waveform: Waveform::new(signal, TARGET_SAMPLE_RATE)?, raw_peak, convergence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::{tone, wav_to_mel};

    #[test]
    fn floor_mel_is_near_silent() {
        let floor = MelSpectrogram::floor_value();
        let mel = MelSpectrogram::new(20, vec![floor; 20 * N_MELS]).unwrap();
        let out = griffin_lim(&mel, &GriffinLim { iterations: 5, seed: 1 }).unwrap();
        assert!(out.raw_peak < 1e-3, "peak {}", out.raw_peak);
    }

    #[test]
    fn convergence_does_not_increase() {
        let mel = wav_to_mel(&tone(300.0, 0.3, 0.5, 22_050)).unwrap();
        let out = griffin_lim(&mel, &GriffinLim { iterations: 30, seed: 3 }).unwrap();
        for w in out.convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", out.convergence);
        }
        assert!((out.waveform.peak() - OUTPUT_PEAK).abs() < 1e-6);
    }

    #[test]
    fn zero_iterations_rejected() {
        let mel = MelSpectrogram::new(3, vec![0.0; 3 * N_MELS]).unwrap();
        assert!(griffin_lim(&mel, &GriffinLim { iterations: 0, seed: 0 }).is_err());
    }

    fn dominant_hz(w: &Waveform) -> f64 {
        let n = w.samples.len().next_power_of_two() * 4;
        let mut buf: Vec<Complex<f64>> =
            w.samples.iter().map(|s| Complex::new(*s as f64, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * w.sample_rate as f64 / n as f64
    }

    #[test]
    fn round_trip_keeps_tone_frequency() {
        for f in [220.0, 440.0, 1000.0, 3000.0] {
            let mel = wav_to_mel(&tone(f, 0.5, 0.5, 22_050)).unwrap();
            let out = griffin_lim(&mel, &GriffinLim::default()).unwrap();
            let got = dominant_hz(&out.waveform);
            assert!((got - f).abs() <= 0.02 * f, "{f} Hz came back as {got}");
        }
    }
}
