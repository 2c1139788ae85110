//! Waveform I/O, log-mel analysis, pitch/energy targets and Griffin-Lim inversion.

mod griffin_lim;
mod mel;
mod pitch;
mod stft;

pub use griffin_lim::{griffin_lim, spectral_convergence, GriffinLim, GriffinLimOutput};
pub use mel::{linear_mel, mel_centres, mel_filterbank, wav_to_mel, MelSpectrogram, MEL_FLOOR, N_MELS};
pub use pitch::{extract_pitch_energy, PitchEnergy};
pub use stft::{istft, stft, stft_magnitude, StftConfig};

use std::path::Path;

use crate::error::{Error, Result};

pub const TARGET_SAMPLE_RATE: u32 = 22_050;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let w = Self { samples, sample_rate };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if ![22_050, 44_100].contains(&self.sample_rate) {
            return Err(Error::Data(format!("unsupported sample rate {}", self.sample_rate)));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0f32, |m, s| m.max(s.abs()))
    }
}

/// Reads 16-bit PCM (or float) RIFF wave files; multichannel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
        }
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>(),
    }
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(err)?;
    }
    writer.finalize().map_err(err)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass, cutoff in cycles/sample, unit DC gain.
fn lowpass_taps(num_taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let m = (num_taps - 1) as f64;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..num_taps)
        .map(|n| {
            let t = n as f64 - m / 2.0;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let r = 2.0 * n as f64 / m - 1.0;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Brings a waveform to 22,050 Hz (identity at 22,050; zero-phase FIR decimation from 44,100).
pub fn resample_to_target(w: &Waveform) -> Result<Waveform> {
    w.validate()?;
    match w.sample_rate {
        TARGET_SAMPLE_RATE => Ok(w.clone()),
        44_100 => {
            let taps = lowpass_taps(255, 10_000.0 / 44_100.0, 10.0);
            let half = (taps.len() / 2) as isize;
            let n_out = w.samples.len().div_ceil(2);
            let x = &w.samples;
            let out = (0..n_out)
                .map(|m| {
                    let centre = 2 * m as isize;
                    let mut acc = 0f64;
                    for (k, &h) in taps.iter().enumerate() {
                        let i = centre + half - k as isize;
                        if i >= 0 && (i as usize) < x.len() {
                            acc += h * x[i as usize] as f64;
                        }
                    }
                    acc as f32
                })
                .collect();
            Waveform::new(out, TARGET_SAMPLE_RATE)
        }
        other => Err(Error::Data(format!("unsupported sample rate {other}"))),
    }
}

/// Sine tone helper used by fixtures and tests.
pub fn tone(freq: f64, secs: f64, amplitude: f64, sample_rate: u32) -> Waveform {
    let n = (secs * sample_rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| (amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin()) as f32)
        .collect();
    Waveform { samples, sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_16bit() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("t.wav");
        let w = tone(440.0, 0.1, 0.5, 22_050);
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 22_050);
        assert_eq!(r.samples.len(), w.samples.len());
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1.0 / 16_000.0);
        }
    }

    #[test]
    fn rejects_odd_rates_and_nan() {
        assert!(Waveform::new(vec![0.0; 4], 16_000).is_err());
        assert!(Waveform::new(vec![f32::NAN], 22_050).is_err());
    }

    #[test]
    fn decimation_preserves_a_low_tone() {
        let hi = tone(440.0, 0.5, 0.5, 44_100);
        let lo = tone(440.0, 0.5, 0.5, 22_050);
        let r = resample_to_target(&hi).unwrap();
        assert_eq!(r.samples.len(), lo.samples.len());
        let worst = r.samples[200..r.samples.len() - 200]
            .iter()
            .zip(&lo.samples[200..])
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(worst < 1e-4, "max deviation {worst}");
    }
}
