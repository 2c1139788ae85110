use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

const MIN_WINDOW_SUM: f64 = 1e-3;

/// Analysis grid: 50 ms Hann window, 275-sample hop, 2048-point FFT at 22,050 Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { sample_rate: 22_050, n_fft: 2048, win_length: 1102, hop_length: 275 }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames without centre padding: `1 + floor((n - win) / hop)`.
    pub fn num_frames(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.win_length {
            return Err(Error::Frame(format!(
                "{n_samples} samples is shorter than one {}-sample frame",
                self.win_length
            )));
        }
        Ok(1 + (n_samples - self.win_length) / self.hop_length)
    }

    /// Samples spanned by `frames` frames.
    pub fn num_samples(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_length + self.win_length
        }
    }

    /// Periodic Hann window of `win_length` samples.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_length as f64;
        (0..self.win_length)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }
}

/// Complex STFT, `frames × bins`.
pub fn stft(samples: &[f32], cfg: &StftConfig) -> Result<Vec<Vec<Complex<f64>>>> {
    let frames = cfg.num_frames(samples.len())?;
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for f in 0..frames {
        let start = f * cfg.hop_length;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i] = Complex::new(samples[start + i] as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..cfg.n_bins()].to_vec());
    }
    Ok(out)
}

pub fn stft_magnitude(samples: &[f32], cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    Ok(stft(samples, cfg)?
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.norm()).collect())
        .collect())
}

/// Least-squares overlap-add inverse of [`stft`]. Samples whose summed squared window
/// falls below `MIN_WINDOW_SUM` (the outermost few dozen at each end) are set to zero.
pub fn istft(spec: &[Vec<Complex<f64>>], cfg: &StftConfig) -> Vec<f32> {
    let n = cfg.num_samples(spec.len());
    let window = cfg.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.n_fft);
    let mut acc = vec![0f64; n];
    let mut wsum = vec![0f64; n];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let nb = cfg.n_bins();
    for (f, row) in spec.iter().enumerate() {
        buf[..nb].copy_from_slice(row);
        for k in nb..cfg.n_fft {
            buf[k] = row[cfg.n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * cfg.hop_length;
        for (i, w) in window.iter().enumerate() {
            acc[start + i] += w * buf[i].re / cfg.n_fft as f64;
            wsum[start + i] += w * w;
        }
    }
    acc.iter()
        .zip(&wsum)
        .map(|(a, w)| if *w > MIN_WINDOW_SUM { (a / w) as f32 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::tone;

    #[test]
    fn one_second_gives_77_frames() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_frames(22_050).unwrap(), 77);
        assert!(cfg.num_frames(1101).is_err());
        assert_eq!(cfg.num_frames(1102).unwrap(), 1);
        assert_eq!(cfg.num_frames(cfg.num_samples(40)).unwrap(), 40);
    }

    #[test]
    fn istft_inverts_stft() {
        let cfg = StftConfig::default();
        let w = tone(330.0, 0.3, 0.4, 22_050);
        let n = cfg.num_samples(cfg.num_frames(w.samples.len()).unwrap());
        let back = istft(&stft(&w.samples, &cfg).unwrap(), &cfg);
        assert_eq!(back.len(), n);
        // the first and last samples carry near-zero window weight
        for i in 70..n - 70 {
            assert!((back[i] - w.samples[i]).abs() < 1e-5, "sample {i}");
        }
    }
}
