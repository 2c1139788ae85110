use std::ops::Range;

use super::{Conversation, Turn, Vocabulary};
use crate::error::{Error, Result};

/// `[CLS] ([SPK:k] words…)* [SPK:k] current words [SEP]` with bookkeeping indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDialogueSample {
    pub input_ids: Vec<u32>,
    /// 0 = history (including the current turn's speaker token), 1 = current words and `[SEP]`.
    pub segment_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    /// Half-open interval covering exactly the current utterance's word tokens.
    pub current_span: Range<usize>,
    pub word_positions: Vec<usize>,
    pub speaker_positions: Vec<usize>,
    /// Turn indices of history turns that survived truncation, oldest first.
    pub history_turns: Vec<usize>,
}

impl TokenizedDialogueSample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn current_ids(&self) -> &[u32] {
        &self.input_ids[self.current_span.clone()]
    }
}

/// The `min(T-1, t_current)` turns before `t_current`, oldest first, and the current turn.
pub fn window_history(
    conv: &Conversation,
    t_current: usize,
    turns_window: usize,
) -> Result<(Vec<&Turn>, &Turn)> {
    if turns_window < 1 {
        return Err(Error::Config("turn window T must be at least 1".into()));
    }
    let current = conv.turns.get(t_current).ok_or_else(|| {
        Error::Validation(format!(
            "turn {t_current} outside conversation {} of {} turns",
            conv.conversation_id,
            conv.turns.len()
        ))
    })?;
    let take = (turns_window - 1).min(t_current);
    let history = conv.turns[t_current - take..t_current].iter().collect();
    Ok((history, current))
}

/// Assembles history + current into one encoder input, dropping the oldest history first when
/// the sequence would exceed `max_seq_len`.
pub fn assemble_sequence(
    history: &[&Turn],
    current: &Turn,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<TokenizedDialogueSample> {
    if current.words.is_empty() {
        return Err(Error::Validation("current utterance has no words".into()));
    }
    let current_ids = vocab.encode_words(&current.words);
    let needed = current_ids.len() + 3;
    if needed > max_seq_len {
        return Err(Error::SampleTooLong { needed, budget: max_seq_len });
    }
    let mut budget = max_seq_len - needed;

    // newest first; whole turns while they fit
    let mut kept: Vec<(usize, u32, Vec<u32>)> = Vec::new();
    for turn in history.iter().rev() {
        let ids = vocab.encode_words(&turn.words);
        let cost = 1 + ids.len();
        if cost <= budget {
            budget -= cost;
            kept.push((turn.turn_index, vocab.speaker_id(turn.speaker_id)?, ids));
        } else {
            if kept.is_empty() && budget >= 2 {
                // nothing whole fits: keep the right edge of the newest turn
                let tail = ids[ids.len() - (budget - 1)..].to_vec();
                kept.push((turn.turn_index, vocab.speaker_id(turn.speaker_id)?, tail));
            }
            break;
        }
    }
    kept.reverse();

    let mut input_ids = vec![vocab.cls_id()];
    let mut speaker_positions = Vec::new();
    let mut history_turns = Vec::new();
    for (idx, spk, ids) in kept {
        speaker_positions.push(input_ids.len());
        input_ids.push(spk);
        input_ids.extend(ids);
        history_turns.push(idx);
    }
    speaker_positions.push(input_ids.len());
    input_ids.push(vocab.speaker_id(current.speaker_id)?);
    let start = input_ids.len();
    input_ids.extend(&current_ids);
    let end = input_ids.len();
    input_ids.push(vocab.sep_id());

    let n = input_ids.len();
    let segment_ids = (0..n).map(|i| u32::from(i >= start)).collect();
    Ok(TokenizedDialogueSample {
        input_ids,
        segment_ids,
        position_ids: (0..n as u32).collect(),
        current_span: start..end,
        word_positions: (start..end).collect(),
        speaker_positions,
        history_turns,
    })
}

/// History side of a contrastive pair: `[CLS] ([SPK:k] words…)* [SEP]`, all segment 0.
pub fn assemble_history_only(
    history: &[&Turn],
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<TokenizedDialogueSample> {
    let mut budget = max_seq_len.saturating_sub(2);
    let mut kept: Vec<(usize, u32, Vec<u32>)> = Vec::new();
    for turn in history.iter().rev() {
        let ids = vocab.encode_words(&turn.words);
        let cost = 1 + ids.len();
        if cost <= budget {
            budget -= cost;
            kept.push((turn.turn_index, vocab.speaker_id(turn.speaker_id)?, ids));
        } else {
            if kept.is_empty() && budget >= 2 {
                let tail = ids[ids.len() - (budget - 1)..].to_vec();
                kept.push((turn.turn_index, vocab.speaker_id(turn.speaker_id)?, tail));
            }
            break;
        }
    }
    kept.reverse();
    let mut input_ids = vec![vocab.cls_id()];
    let mut speaker_positions = Vec::new();
    let mut history_turns = Vec::new();
    for (idx, spk, ids) in kept {
        speaker_positions.push(input_ids.len());
        input_ids.push(spk);
        input_ids.extend(ids);
        history_turns.push(idx);
    }
    input_ids.push(vocab.sep_id());
    let n = input_ids.len();
    Ok(TokenizedDialogueSample {
        input_ids,
        segment_ids: vec![0; n],
        position_ids: (0..n as u32).collect(),
        current_span: n - 1..n - 1,
        word_positions: Vec::new(),
        speaker_positions,
        history_turns,
    })
}

/// Current side of a contrastive pair: the `T = 1` assembly `[CLS] [SPK:k] words [SEP]`.
pub fn assemble_current_only(
    current: &Turn,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<TokenizedDialogueSample> {
    assemble_sequence(&[], current, vocab, max_seq_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, split_words};
    use proptest::prelude::*;

    fn turn(i: usize, spk: usize, text: &str) -> Turn {
        Turn {
            turn_index: i,
            speaker_id: spk,
            text: text.into(),
            words: split_words(text),
            phonemes: None,
            audio_path: None,
            durations: None,
        }
    }

    fn conv(n: usize) -> Conversation {
        Conversation {
            conversation_id: "c".into(),
            turns: (0..n).map(|i| turn(i, i % 2, &format!("turn number {i}"))).collect(),
        }
    }

    fn indices(h: &[&Turn]) -> Vec<usize> {
        h.iter().map(|t| t.turn_index).collect()
    }

    #[test]
    fn window_examples() {
        let c = conv(10);
        let (h, cur) = window_history(&c, 7, 2).unwrap();
        assert_eq!(indices(&h), vec![6]);
        assert_eq!(cur.turn_index, 7);
        for t in 1..15 {
            assert!(window_history(&c, 0, t).unwrap().0.is_empty());
        }
        let (h, _) = window_history(&c, 5, 14).unwrap();
        assert_eq!(indices(&h), vec![0, 1, 2, 3, 4]);
        assert!(matches!(window_history(&c, 5, 0), Err(Error::Config(_))));
        assert!(window_history(&c, 10, 2).is_err());
    }

    #[test]
    fn assembly_layout() {
        let h = turn(0, 0, "hello there");
        let cur = turn(1, 1, "hi");
        let c = Conversation { conversation_id: "x".into(), turns: vec![h.clone(), cur.clone()] };
        let v = build_vocabulary(&[c], 2);
        let s = assemble_sequence(&[&h], &cur, &v, 64).unwrap();
        let toks: Vec<&str> = s.input_ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["[CLS]", "[SPK:0]", "hello", "there", "[SPK:1]", "hi", "[SEP]"]);
        assert_eq!(s.current_span, 5..6);
        assert_eq!(s.segment_ids, vec![0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(s.speaker_positions, vec![1, 4]);
        assert_eq!(s.position_ids, vec![0, 1, 2, 3, 4, 5, 6]);

        let s1 = assemble_sequence(&[], &cur, &v, 64).unwrap();
        let toks: Vec<&str> = s1.input_ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["[CLS]", "[SPK:1]", "hi", "[SEP]"]);
    }

    #[test]
    fn overflow_drops_oldest_whole_turn() {
        let c = conv(4);
        let v = build_vocabulary(std::slice::from_ref(&c), 2);
        let hist: Vec<&Turn> = c.turns[..3].iter().collect();
        let cur = &c.turns[3];
        let full = assemble_sequence(&hist, cur, &v, 256).unwrap();
        // each history turn costs 4 positions; remove one turn's worth of budget
        let trimmed = assemble_sequence(&hist, cur, &v, full.len() - 1).unwrap();
        assert_eq!(trimmed.history_turns, vec![1, 2]);
        assert_eq!(&trimmed.input_ids[1..], &full.input_ids[5..]);
        assert_eq!(trimmed.current_ids(), full.current_ids());
    }

    #[test]
    fn newest_turn_truncated_from_left_as_last_resort() {
        let h = turn(0, 0, "a b c d e f");
        let cur = turn(1, 1, "x");
        let c = Conversation { conversation_id: "x".into(), turns: vec![h.clone(), cur.clone()] };
        let v = build_vocabulary(&[c], 2);
        let s = assemble_sequence(&[&h], &cur, &v, 7).unwrap();
        let toks: Vec<&str> = s.input_ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["[CLS]", "[SPK:0]", "e", "f", "[SPK:1]", "x", "[SEP]"]);
    }

    #[test]
    fn current_alone_too_long() {
        let cur = turn(0, 0, "one two three");
        let c = Conversation { conversation_id: "x".into(), turns: vec![cur.clone()] };
        let v = build_vocabulary(&[c], 1);
        assert!(matches!(
            assemble_sequence(&[], &cur, &v, 5),
            Err(Error::SampleTooLong { needed: 6, budget: 5 })
        ));
        assert!(assemble_sequence(&[], &cur, &v, 6).is_ok());
    }

    #[test]
    fn contrastive_halves() {
        let c = conv(3);
        let v = build_vocabulary(std::slice::from_ref(&c), 2);
        let hist: Vec<&Turn> = c.turns[..2].iter().collect();
        let h = assemble_history_only(&hist, &v, 64).unwrap();
        assert_eq!(h.input_ids[0], v.cls_id());
        assert_eq!(*h.input_ids.last().unwrap(), v.sep_id());
        assert!(h.segment_ids.iter().all(|&s| s == 0));
        assert_eq!(h.len(), 2 + 2 * 4);
        let r = assemble_current_only(&c.turns[2], &v, 64).unwrap();
        assert_eq!(r.len(), 3 + 3);
    }

    proptest! {
        #[test]
        fn assembly_invariants(
            texts in proptest::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,5}[?!.]?", 1..8),
            max_len in 12usize..40,
        ) {
            let turns: Vec<Turn> = texts.iter().enumerate().map(|(i, t)| turn(i, i % 3, t)).collect();
            let c = Conversation { conversation_id: "p".into(), turns };
            let v = build_vocabulary(std::slice::from_ref(&c), 3);
            let last = c.turns.len() - 1;
            let (hist, cur) = window_history(&c, last, 14).unwrap();
            let s = assemble_sequence(&hist, cur, &v, max_len).unwrap();
            prop_assert!(s.len() <= max_len);
            prop_assert_eq!(s.input_ids[0], v.cls_id());
            prop_assert_eq!(*s.input_ids.last().unwrap(), v.sep_id());
            prop_assert_eq!(s.segment_ids.len(), s.len());
            prop_assert_eq!(s.position_ids.len(), s.len());
            prop_assert!(s.current_ids().iter().all(|&i| !v.is_special(i)));
            // round trip of the current words
            let back: Vec<&str> = s.word_positions.iter().map(|&p| v.token(s.input_ids[p]).unwrap()).collect();
            let words: Vec<&str> = cur.words.iter().map(String::as_str).collect();
            prop_assert_eq!(back, words);
            prop_assert_eq!(s.segment_ids.iter().filter(|&&x| x == 1).count(), cur.words.len() + 1);
        }

        #[test]
        fn smaller_window_is_suffix(n in 1usize..20, t_cur in 0usize..20, a in 1usize..15, b in 1usize..15) {
            let c = conv(n);
            let t_cur = t_cur % n;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (hs, _) = window_history(&c, t_cur, lo).unwrap();
            let (hl, _) = window_history(&c, t_cur, hi).unwrap();
            let small = indices(&hs);
            let large = indices(&hl);
            prop_assert!(large.ends_with(&small));
        }
    }
}
