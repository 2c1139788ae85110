use rand::Rng;

use super::{TokenizedDialogueSample, Vocabulary};
use crate::error::{Error, Result};

/// Label value at positions that were not selected for masking.
pub const IGNORE_LABEL: i64 = -100;

/// Samples right-padded to a common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub segment_ids: Vec<Vec<u32>>,
    pub position_ids: Vec<Vec<u32>>,
    /// `false` at `[PAD]`.
    pub attention_mask: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.input_ids.len()
    }

    pub fn seq_len(&self) -> usize {
        self.input_ids.first().map_or(0, Vec::len)
    }
}

/// Pads to the longest sample, or to `min_len` if that is longer.
pub fn pad_samples(samples: &[TokenizedDialogueSample], pad_id: u32, min_len: usize) -> PaddedBatch {
    let len = samples.iter().map(|s| s.len()).max().unwrap_or(0).max(min_len);
    let pad = |v: &[u32], fill: u32| {
        let mut out = v.to_vec();
        out.resize(len, fill);
        out
    };
    PaddedBatch {
        input_ids: samples.iter().map(|s| pad(&s.input_ids, pad_id)).collect(),
        segment_ids: samples.iter().map(|s| pad(&s.segment_ids, 0)).collect(),
        position_ids: samples.iter().map(|s| pad(&s.position_ids, 0)).collect(),
        attention_mask: samples
            .iter()
            .map(|s| (0..len).map(|i| i < s.len()).collect())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub masked_input_ids: Vec<Vec<u32>>,
    /// Original id at selected positions, [`IGNORE_LABEL`] elsewhere.
    pub labels: Vec<Vec<i64>>,
    pub attention_mask: Vec<Vec<bool>>,
    pub segment_ids: Vec<Vec<u32>>,
    pub position_ids: Vec<Vec<u32>>,
}

impl MaskedBatch {
    pub fn masked_count(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l != IGNORE_LABEL).count()
    }
}

/// Selects each ordinary word position with probability `mask_prob`; selected positions become
/// `[MASK]` 80% of the time, a random word 10%, and stay unchanged 10%.
pub fn dynamic_mask<R: Rng>(
    samples: &[TokenizedDialogueSample],
    vocab: &Vocabulary,
    mask_prob: f64,
    rng: &mut R,
) -> Result<MaskedBatch> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::Config(format!("mask probability {mask_prob} outside (0, 1)")));
    }
    let padded = pad_samples(samples, vocab.pad_id(), 0);
    let first_word = vocab.first_word_id();
    let n_vocab = vocab.len() as u32;
    let mut masked_input_ids = padded.input_ids.clone();
    let mut labels = Vec::with_capacity(samples.len());
    for (row, ids) in masked_input_ids.iter_mut().enumerate() {
        let mut lab = vec![IGNORE_LABEL; ids.len()];
        for (j, id) in ids.iter_mut().enumerate() {
            if !padded.attention_mask[row][j] || vocab.is_special(*id) {
                continue;
            }
            if rng.random::<f64>() >= mask_prob {
                continue;
            }
            lab[j] = *id as i64;
            let r: f64 = rng.random();
            if r < 0.8 {
                *id = vocab.mask_id();
            } else if r < 0.9 && n_vocab > first_word {
                *id = rng.random_range(first_word..n_vocab);
            }
        }
        labels.push(lab);
    }
    Ok(MaskedBatch {
        masked_input_ids,
        labels,
        attention_mask: padded.attention_mask,
        segment_ids: padded.segment_ids,
        position_ids: padded.position_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assemble_sequence, build_vocabulary, split_words, Conversation, Turn};
    use crate::rng::derive_rng;

    fn sample(text: &str) -> (TokenizedDialogueSample, Vocabulary) {
        let t = Turn {
            turn_index: 0,
            speaker_id: 0,
            text: text.into(),
            words: split_words(text),
            phonemes: None,
            audio_path: None,
            durations: None,
        };
        let c = Conversation { conversation_id: "m".into(), turns: vec![t.clone()] };
        let v = build_vocabulary(&[c], 1);
        (assemble_sequence(&[], &t, &v, 512).unwrap(), v)
    }

    #[test]
    fn rejects_bad_probability() {
        let (s, v) = sample("a b");
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(dynamic_mask(&[s.clone()], &v, p, &mut derive_rng(0, &[])).is_err());
        }
    }

    #[test]
    fn only_word_positions_are_maskable() {
        let (s, v) = sample("word");
        for seed in 0..200 {
            let b = dynamic_mask(&[s.clone()], &v, 0.9, &mut derive_rng(seed, &[])).unwrap();
            for (j, &l) in b.labels[0].iter().enumerate() {
                if l != IGNORE_LABEL {
                    assert_eq!(j, 2);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_batch_and_seeds_differ() {
        let text = (0..200).map(|i| format!("w{}", i % 17)).collect::<Vec<_>>().join(" ");
        let (s, v) = sample(&text);
        let a = dynamic_mask(&[s.clone()], &v, 0.15, &mut derive_rng(5, &[0, 1])).unwrap();
        let b = dynamic_mask(&[s.clone()], &v, 0.15, &mut derive_rng(5, &[0, 1])).unwrap();
        let c = dynamic_mask(&[s.clone()], &v, 0.15, &mut derive_rng(5, &[0, 2])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn unselected_positions_are_untouched() {
        let text = (0..100).map(|i| format!("t{}", i % 9)).collect::<Vec<_>>().join(" ");
        let (s, v) = sample(&text);
        let b = dynamic_mask(&[s.clone()], &v, 0.3, &mut derive_rng(1, &[])).unwrap();
        for j in 0..s.len() {
            if b.labels[0][j] == IGNORE_LABEL {
                assert_eq!(b.masked_input_ids[0][j], s.input_ids[j]);
            } else {
                assert_eq!(b.labels[0][j], s.input_ids[j] as i64);
            }
        }
    }

    #[test]
    fn padding_is_never_selected() {
        let (a, v) = sample("x y z q r s t u");
        let short = TokenizedDialogueSample {
            input_ids: a.input_ids[..4].to_vec(),
            segment_ids: a.segment_ids[..4].to_vec(),
            position_ids: a.position_ids[..4].to_vec(),
            current_span: 2..3,
            word_positions: vec![2],
            speaker_positions: vec![1],
            history_turns: vec![],
        };
        let b = dynamic_mask(&[a.clone(), short], &v, 0.9, &mut derive_rng(3, &[])).unwrap();
        for j in 4..a.len() {
            assert!(!b.attention_mask[1][j]);
            assert_eq!(b.labels[1][j], IGNORE_LABEL);
            assert_eq!(b.masked_input_ids[1][j], v.pad_id());
        }
    }
}
