//! Fast self-checks runnable from the command line.

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::acoustic::{
    viterbi_durations, path_score, AcousticConfig, ContextInputs, Fusion, FusionInit, PhonemeSequence,
};
use crate::audiofeat::{extract_pitch_energy, tone, wav_to_mel, StftConfig, TARGET_SAMPLE_RATE};
use crate::corpus::{dynamic_mask, TokenizedDialogueSample, Vocabulary, IGNORE_LABEL};
use crate::error::Result;
use crate::fine_context::{dc_loss, masked_nll};
use crate::nn::{scalar_f64, ParamStore};
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn loss_goldens() -> Result<(bool, String)> {
    let dev = Device::Cpu;
    let one = Tensor::new(&[[0.3f64, -1.2, 0.7]], &dev)?;
    let single = scalar_f64(&dc_loss(&one, &one)?)?;
    let v = 50usize;
    let uniform = Tensor::zeros((4, v), DType::F64, &dev)?;
    let mlm = scalar_f64(&masked_nll(&uniform, &[0, 7, 13, 49])?)?;
    let eye = Tensor::new(&[[1f64, 0.], [0., 1.]], &dev)?;
    let dc = scalar_f64(&dc_loss(&eye, &eye)?)?;
    let oracle = (1f64.exp() + 1.0).ln() - 1.0;
    let ok = single == 0.0 && (mlm - (v as f64).ln()).abs() < 1e-6 && (dc - oracle).abs() < 1e-6;
    Ok((ok, format!("dc(T'=1)={single}, mlm-ln V={:.2e}, dc 2x2 err={:.2e}", mlm - (v as f64).ln(), dc - oracle)))
}

fn frame_count() -> Result<(bool, String)> {
    let mel = wav_to_mel(&tone(440.0, 1.0, 0.5, TARGET_SAMPLE_RATE))?;
    Ok((mel.n_frames == 77, format!("{} frames for 1 s", mel.n_frames)))
}

fn pitch_220() -> Result<(bool, String)> {
    let pe = extract_pitch_energy(&tone(220.0, 1.0, 0.5, TARGET_SAMPLE_RATE), &StftConfig::default())?;
    let voiced: Vec<f64> = pe.pitch.iter().filter(|&&p| p > 0.0).map(|&p| (p as f64).exp()).collect();
    let worst = voiced.iter().map(|f| (f - 220.0).abs()).fold(0.0, f64::max);
    Ok((!voiced.is_empty() && worst <= 5.0, format!("{} voiced frames, worst |f0-220| = {worst:.3} Hz", voiced.len())))
}

fn best_by_enumeration(lp: &[Vec<f64>]) -> f64 {
    fn rec(lp: &[Vec<f64>], t: usize, p: usize, acc: f64, best: &mut f64) {
        let (f, n) = (lp.len(), lp[0].len());
        let acc = acc + lp[t][p];
        if t + 1 == f {
            if p + 1 == n {
                *best = best.max(acc);
            }
            return;
        }
        rec(lp, t + 1, p, acc, best);
        if p + 1 < n {
            rec(lp, t + 1, p + 1, acc, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    rec(lp, 0, 0, 0.0, &mut best);
    best
}

fn aligner_paths() -> Result<(bool, String)> {
    let mut rng = derive_rng(0xA1, &[]);
    let mut failures = 0;
    for case in 0..40 {
        let (n, f) = if case % 2 == 0 { (3, 6) } else { (4, 8) };
        let lp: Vec<Vec<f64>> = (0..f).map(|_| (0..n).map(|_| -rng.random::<f64>() * 5.0).collect()).collect();
        let d = viterbi_durations(&lp)?;
        if (path_score(&lp, &d) - best_by_enumeration(&lp)).abs() > 1e-12 {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{failures} of 40 lattices disagree with enumeration")))
}

fn masking_rate() -> Result<(bool, String)> {
    let vocab = Vocabulary::build(["a", "b", "c", "d"], 2);
    let words: Vec<u32> = (0..60).map(|i| vocab.first_word_id() + (i % 4)).collect();
    let mut ids = vec![vocab.cls_id(), vocab.speaker_id(0)?];
    ids.extend(&words);
    ids.push(vocab.sep_id());
    let n = ids.len();
    let sample = TokenizedDialogueSample {
        segment_ids: vec![0; n],
        position_ids: (0..n as u32).collect(),
        current_span: 2..n - 1,
        word_positions: (2..n - 1).collect(),
        speaker_positions: vec![1],
        history_turns: vec![],
        input_ids: ids,
    };
    let batch = vec![sample; 50];
    let mut rng = derive_rng(0xA2, &[]);
    let (mut selected, mut total, mut special_hits) = (0usize, 0usize, 0usize);
    while total < 100_000 {
        let m = dynamic_mask(&batch, &vocab, 0.15, &mut rng)?;
        for (row, s) in m.labels.iter().zip(&batch) {
            for (i, &l) in row.iter().enumerate() {
                let special = vocab.is_special(s.input_ids[i]);
                if l != IGNORE_LABEL {
                    if special {
                        special_hits += 1;
                    } else {
                        selected += 1;
                    }
                }
                total += usize::from(!special);
            }
        }
    }
    let rate = selected as f64 / total as f64;
    Ok(((rate - 0.15).abs() <= 0.02 && special_hits == 0, format!("rate {rate:.4} over {total} positions, {special_hits} special")))
}

fn ablation() -> Result<(bool, String)> {
    let cfg = AcousticConfig::toy(2);
    let store = ParamStore::new(DType::F32, 3);
    let fusion = Fusion::new(&store, "fuse", &cfg, FusionInit::Xavier)?;
    let seq = PhonemeSequence::new(vec![5, 6, 7, 8], vec![0, 0, 1, 1])?;
    let d = cfg.d_model;
    let h_p = Tensor::randn(0f32, 1.0, (seq.len(), d), &Device::Cpu)?;
    let h_s = Tensor::randn(0f32, 1.0, d, &Device::Cpu)?;
    let zero = ContextInputs {
        fine: Tensor::zeros((2, d), DType::F32, &Device::Cpu)?,
        coarse: Tensor::zeros(d, DType::F32, &Device::Cpu)?,
    };
    let a: Vec<f32> = fusion.forward(&h_p, &h_s, &zero, &seq.word_map)?.flatten_all()?.to_vec1()?;
    let b: Vec<f32> = fusion.forward_baseline(&h_p, &h_s)?.flatten_all()?.to_vec1()?;
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same, format!("{} fused values compared bitwise", a.len())))
}

/// Runs every check; none of them needs a corpus or a trained model.
pub fn run_checks() -> Vec<CheckResult> {
    vec![
        check("loss goldens", loss_goldens),
        check("frame count", frame_count),
        check("pitch 220 Hz", pitch_220),
        check("aligner best path", aligner_paths),
        check("masking rate", masking_rate),
        check("ablation bit identity", ablation),
    ]
}
