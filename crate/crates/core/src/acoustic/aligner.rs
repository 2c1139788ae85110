use candle_core::Tensor;

use super::config::AcousticConfig;
use super::phonemes::{PhonemeInventory, PhonemeSequence};
use crate::audiofeat::N_MELS;
use crate::error::{Error, Result};
use crate::nn::{log_add_exp, log_softmax_last, Conv1d, Embedding, Init, ParamStore};

/// Stand-in for log(0) that keeps log-add-exp finite.
const NEG: f64 = -1e30;

/// Output of [`Aligner::align`].
#[derive(Debug, Clone)]
pub struct Alignment {
    /// `frames × phonemes` log-probabilities (normalised over phonemes).
    pub log_probs: Tensor,
    /// Best monotonic path durations, one per phoneme, summing to the frame count.
    pub durations: Vec<u32>,
    /// Negative forward log-likelihood of the monotonic lattice, per frame.
    pub loss: Tensor,
}

/// Convolutional text and mel embeddings compared by negative squared distance.
#[derive(Clone, Debug)]
pub struct Aligner {
    text_emb: Embedding,
    text_conv1: Conv1d,
    text_conv2: Conv1d,
    mel_conv1: Conv1d,
    mel_conv2: Conv1d,
    dim: usize,
}

impl Aligner {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        let a = cfg.aligner_dim;
        let n_ph = PhonemeInventory::standard().len();
        Ok(Self {
            text_emb: Embedding::new(store, &format!("{name}.text_emb"), n_ph, a, Init::Normal(1.0))?,
            text_conv1: Conv1d::new(store, &format!("{name}.text_conv1"), a, a, 3)?,
            text_conv2: Conv1d::new(store, &format!("{name}.text_conv2"), a, a, 1)?,
            mel_conv1: Conv1d::new(store, &format!("{name}.mel_conv1"), N_MELS, a, 3)?,
            mel_conv2: Conv1d::new(store, &format!("{name}.mel_conv2"), a, a, 1)?,
            dim: a,
        })
    }

    /// `frames × phonemes` log-probabilities for a `frames × 80` mel.
    pub fn log_probs(&self, phonemes: &PhonemeSequence, mel: &Tensor) -> Result<Tensor> {
        let ids = Tensor::from_slice(&phonemes.ids, phonemes.len(), mel.device())?;
        let t = self.text_emb.forward(&ids)?;
        let t = self.text_conv2.forward_seq(&self.text_conv1.forward_seq(&t)?.relu()?)?;
        let m = self.mel_conv2.forward_seq(&self.mel_conv1.forward_seq(mel)?.relu()?)?;
        let m2 = m.sqr()?.sum_keepdim(1)?;
        let t2 = t.sqr()?.sum_keepdim(1)?.t()?;
        let cross = m.matmul(&t.t()?)?;
        let dist = (m2.broadcast_add(&t2)? - (cross * 2.0)?)?;
        log_softmax_last(&(dist * (-1.0 / self.dim as f64))?)
    }

    pub fn align(&self, phonemes: &PhonemeSequence, mel: &Tensor) -> Result<Alignment> {
        let (frames, _) = mel.dims2()?;
        if frames < phonemes.len() {
            return Err(Error::InfeasibleAlignment { frames, phonemes: phonemes.len() });
        }
        let log_probs = self.log_probs(phonemes, mel)?;
        let host: Vec<Vec<f64>> = log_probs.to_dtype(candle_core::DType::F64)?.to_vec2()?;
        let durations = viterbi_durations(&host)?;
        let loss = monotonic_nll(&log_probs)?;
        Ok(Alignment { log_probs, durations, loss })
    }
}

/// `-log Σ_paths Π_f p(f, path_f) / F` over monotonic paths that start on the first phoneme,
/// end on the last and advance by at most one phoneme per frame.
pub fn monotonic_nll(log_probs: &Tensor) -> Result<Tensor> {
    let (frames, p) = log_probs.dims2()?;
    if frames < p {
        return Err(Error::InfeasibleAlignment { frames, phonemes: p });
    }
    let dev = log_probs.device();
    let dt = log_probs.dtype();
    let neg = |n: usize| -> Result<Tensor> { Ok(Tensor::full(NEG, n, dev)?.to_dtype(dt)?) };
    let row = |f: usize| -> Result<Tensor> { Ok(log_probs.get(f)?) };
    let first = row(0)?;
    let mut alpha = if p == 1 {
        first
    } else {
        Tensor::cat(&[&first.narrow(0, 0, 1)?, &neg(p - 1)?], 0)?
    };
    for f in 1..frames {
        let advanced = if p == 1 {
            neg(1)?
        } else {
            Tensor::cat(&[&neg(1)?, &alpha.narrow(0, 0, p - 1)?], 0)?
        };
        alpha = (log_add_exp(&alpha, &advanced)? + row(f)?)?;
    }
    Ok((alpha.narrow(0, p - 1, 1)?.squeeze(0)? * (-1.0 / frames as f64))?)
}

/// Best monotonic no-skip path through a `frames × phonemes` score matrix.
pub fn viterbi_durations(log_probs: &[Vec<f64>]) -> Result<Vec<u32>> {
    let frames = log_probs.len();
    let p = log_probs.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(Error::Validation("no phonemes to align".into()));
    }
    if frames < p {
        return Err(Error::InfeasibleAlignment { frames, phonemes: p });
    }
    let mut delta = vec![vec![f64::NEG_INFINITY; p]; frames];
    let mut advanced = vec![vec![false; p]; frames];
    delta[0][0] = log_probs[0][0];
    for f in 1..frames {
        // phoneme j is reachable at frame f only if j <= f and j >= p - (frames - f)
        let lo = (p + f).saturating_sub(frames);
        for j in lo..p.min(f + 1) {
            let stay = delta[f - 1][j];
            let adv = if j > 0 { delta[f - 1][j - 1] } else { f64::NEG_INFINITY };
            let (best, moved) = if adv > stay { (adv, true) } else { (stay, false) };
            delta[f][j] = best + log_probs[f][j];
            advanced[f][j] = moved;
        }
    }
    let mut durations = vec![0u32; p];
    let mut j = p - 1;
    for f in (0..frames).rev() {
        durations[j] += 1;
        if f > 0 && advanced[f][j] {
            j -= 1;
        }
    }
    debug_assert_eq!(j, 0);
    Ok(durations)
}

/// Score of the path given by `durations` (each ≥ 1).
pub fn path_score(log_probs: &[Vec<f64>], durations: &[u32]) -> f64 {
    let mut f = 0;
    let mut s = 0.0;
    for (j, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            s += log_probs[f][j];
            f += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn degenerate_lattices() {
        assert_eq!(viterbi_durations(&vec![vec![-1.0]; 7]).unwrap(), vec![7]);
        assert_eq!(viterbi_durations(&[vec![-1.0, -2.0], vec![-3.0, -0.5]]).unwrap(), vec![1, 1]);
        assert!(matches!(
            viterbi_durations(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]),
            Err(Error::InfeasibleAlignment { frames: 2, phonemes: 3 })
        ));
    }

    #[test]
    fn forward_loss_matches_path_sum() {
        // 2 phonemes over 3 frames: paths [1,2] and [2,1]
        let lp = [[-0.2f64, -1.7], [-0.9, -0.5], [-1.1, -0.4]];
        let t = Tensor::new(&lp, &Device::Cpu).unwrap();
        let got = monotonic_nll(&t).unwrap().to_scalar::<f64>().unwrap();
        let a = (lp[0][0] + lp[1][1] + lp[2][1]).exp();
        let b = (lp[0][0] + lp[1][0] + lp[2][1]).exp();
        assert!((got - (-(a + b).ln() / 3.0)).abs() < 1e-12);
        let one = Tensor::new(&[[-0.3f64], [-0.2]], &Device::Cpu).unwrap();
        assert!((monotonic_nll(&one).unwrap().to_scalar::<f64>().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn aligner_durations_partition_frames() {
        let store = ParamStore::new(DType::F32, 9);
        let a = Aligner::new(&store, "align", &AcousticConfig::toy(1)).unwrap();
        let ph = PhonemeSequence::new(vec![3, 7, 9, 2], vec![0, 0, 1, 1]).unwrap();
        let mel = store.get_or_init("x.mel", &[20, N_MELS], Init::Normal(1.0)).unwrap();
        let al = a.align(&ph, &mel).unwrap();
        assert_eq!(al.log_probs.dims(), &[20, 4]);
        assert_eq!(al.durations.iter().sum::<u32>(), 20);
        assert!(al.durations.iter().all(|&d| d >= 1));
        assert!(al.loss.to_scalar::<f32>().unwrap() >= 0.0);
        let short = store.get_or_init("x.short", &[3, N_MELS], Init::Normal(1.0)).unwrap();
        assert!(a.align(&ph, &short).is_err());
    }
}
