use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

pub fn speaker_token(k: usize) -> String {
    format!("[SPK:{k}]")
}

/// Word-level vocabulary. Layout: `[PAD] [CLS] [SEP] [MASK] [SPK:0..K) [UNK]`, then words.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
    num_speakers: usize,
}

impl Vocabulary {
    pub fn specials(num_speakers: usize) -> Vec<String> {
        let mut v: Vec<String> = [PAD, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
        v.extend((0..num_speakers).map(speaker_token));
        v.push(UNK.to_string());
        v
    }

    /// Builds a vocabulary from word lists, most frequent first (ties broken lexicographically).
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, num_speakers: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        // punctuation is split off during tokenization, so no word can spell a special token
        let mut tokens = Self::specials(num_speakers);
        tokens.extend(ranked.into_iter().map(|(w, _)| w.to_string()));
        Self::from_tokens(tokens, num_speakers).expect("constructed vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>, num_speakers: usize) -> Result<Self> {
        let specials = Self::specials(num_speakers);
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(Error::Validation("vocabulary must start with the special tokens".into()));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { id_to_token: tokens, token_to_id, num_speakers })
    }

    /// Rebuilds the reverse index after deserialization.
    pub fn reindex(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    pub fn pad_id(&self) -> u32 {
        0
    }
    pub fn cls_id(&self) -> u32 {
        1
    }
    pub fn sep_id(&self) -> u32 {
        2
    }
    pub fn mask_id(&self) -> u32 {
        3
    }
    pub fn speaker_id(&self, k: usize) -> Result<u32> {
        if k >= self.num_speakers {
            return Err(Error::Validation(format!(
                "speaker {k} outside [0, {})",
                self.num_speakers
            )));
        }
        Ok(4 + k as u32)
    }
    pub fn unk_id(&self) -> u32 {
        4 + self.num_speakers as u32
    }
    /// First id that is an ordinary word.
    pub fn first_word_id(&self) -> u32 {
        self.unk_id() + 1
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < self.first_word_id()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Word ids for `words`, OOV → `[UNK]`.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words
            .iter()
            .map(|w| match self.token_to_id.get(w.as_ref()) {
                Some(&id) if !self.is_special(id) => id,
                _ => self.unk_id(),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = s.lines().map(str::to_string).collect();
        let num_speakers = tokens
            .iter()
            .take_while(|t| t.starts_with("[SPK:") || [PAD, CLS, SEP, MASK].contains(&t.as_str()))
            .filter(|t| t.starts_with("[SPK:"))
            .count();
        Self::from_tokens(tokens, num_speakers)
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Lowercased whitespace tokenization with every punctuation character split off.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if is_punct(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    vocab.encode_words(&split_words(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["did", "you", "win", "?", "you"], 2)
    }

    #[test]
    fn specials_are_fixed() {
        let v = vocab();
        assert_eq!(v.id(PAD), Some(0));
        assert_eq!(v.id(CLS), Some(1));
        assert_eq!(v.id(SEP), Some(2));
        assert_eq!(v.id(MASK), Some(3));
        assert_eq!(v.id("[SPK:0]"), Some(4));
        assert_eq!(v.id("[SPK:1]"), Some(5));
        assert_eq!(v.id(UNK), Some(6));
        assert_eq!(v.first_word_id(), 7);
        assert_eq!(v.token(7), Some("you"));
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab();
        let ids = tokenize("Did you win?", &v);
        let expect: Vec<u32> = ["did", "you", "win", "?"].iter().map(|w| v.id(w).unwrap()).collect();
        assert_eq!(ids, expect);
        assert!(tokenize("", &v).is_empty());
        assert_eq!(tokenize("ZzUnknownZz", &v), vec![v.unk_id()]);
    }

    #[test]
    fn special_spellings_in_text_are_not_specials() {
        let v = vocab();
        assert_eq!(v.encode_words(&["[CLS]"]), vec![v.unk_id()]);
    }

    #[test]
    fn split_handles_apostrophes_and_unicode() {
        assert_eq!(split_words("Don't  STOP…"), vec!["don", "'", "t", "stop", "…"]);
        assert_eq!(split_words("Ünïcode"), vec!["ünïcode"]);
    }

    #[test]
    fn file_roundtrip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.num_speakers(), 2);
    }

    #[test]
    fn bijection() {
        let v = vocab();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
    }
}
