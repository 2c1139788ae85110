use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH",
    "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V",
    "W", "Y", "Z", "ZH",
];

/// Symbol for characters with no phoneme of their own.
pub const SPOKEN_NOISE: &str = "spn";

/// Fixed phoneme symbol table: `spn`, ARPAbet, the letters and digits used by the
/// spelling fallback, and one symbol per ASCII punctuation character.
#[derive(Debug, Clone)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl PhonemeInventory {
    pub fn standard() -> &'static Self {
        static INV: OnceLock<PhonemeInventory> = OnceLock::new();
        INV.get_or_init(|| {
            let mut symbols = vec![SPOKEN_NOISE.to_string()];
            symbols.extend(ARPABET.iter().map(|s| s.to_string()));
            symbols.extend(('a'..='z').chain('0'..='9').map(String::from));
            symbols.extend((0x21u8..0x7f).map(char::from).filter(char::is_ascii_punctuation).map(String::from));
            let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
            PhonemeInventory { symbols, index }
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }
}

/// Phoneme ids of the current utterance with, for each phoneme, the index of its word.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
    pub word_map: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>, word_map: Vec<usize>) -> Result<Self> {
        let s = Self { ids, word_map };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_map.last().map_or(0, |w| w + 1)
    }

    /// Checks the word map starts at word 0, never decreases and never skips a word.
    pub fn validate(&self) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Validation("empty phoneme sequence".into()));
        }
        if self.ids.len() != self.word_map.len() {
            return Err(Error::Shape(format!(
                "{} phonemes but {} word-map entries",
                self.ids.len(),
                self.word_map.len()
            )));
        }
        if self.word_map[0] != 0 {
            return Err(Error::Validation("word map must start at word 0".into()));
        }
        for w in self.word_map.windows(2) {
            if w[1] < w[0] || w[1] > w[0] + 1 {
                return Err(Error::Validation(format!("word map steps from {} to {}", w[0], w[1])));
            }
        }
        let n = PhonemeInventory::standard().len() as u32;
        if let Some(bad) = self.ids.iter().find(|&&i| i >= n) {
            return Err(Error::Validation(format!("unknown phoneme id {bad}")));
        }
        Ok(())
    }

    /// Builds the sequence from per-word symbol lists.
    pub fn from_symbols<S: AsRef<str>>(words: &[Vec<S>]) -> Result<Self> {
        let inv = PhonemeInventory::standard();
        let mut ids = Vec::new();
        let mut word_map = Vec::new();
        for (w, syms) in words.iter().enumerate() {
            if syms.is_empty() {
                return Err(Error::Validation(format!("word {w} has no phonemes")));
            }
            for s in syms {
                let s = s.as_ref();
                ids.push(inv.id(s).ok_or_else(|| Error::Validation(format!("unknown phoneme {s:?}")))?);
                word_map.push(w);
            }
        }
        Self::new(ids, word_map)
    }
}

/// Pronunciation lexicon with a spell-it-out fallback for unknown words.
#[derive(Debug, Clone)]
pub struct G2p {
    lexicon: BTreeMap<String, Vec<String>>,
}

impl G2p {
    /// The bundled lexicon.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/lexicon.txt")).expect("bundled lexicon parses")
    }

    /// One entry per line: `word PH PH …`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let inv = PhonemeInventory::standard();
        let mut lexicon = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_lowercase();
            let phones: Vec<String> = parts.map(String::from).collect();
            if phones.is_empty() || phones.iter().any(|p| inv.id(p).is_none()) {
                return Err(Error::Parse { line: i + 1, message: format!("bad lexicon entry {line:?}") });
            }
            lexicon.insert(word, phones);
        }
        Ok(Self { lexicon })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.lexicon.contains_key(word)
    }

    pub fn word(&self, word: &str) -> Vec<String> {
        if let Some(p) = self.lexicon.get(word) {
            return p.clone();
        }
        let inv = PhonemeInventory::standard();
        word.chars()
            .flat_map(char::to_lowercase)
            .map(|c| {
                let s = c.to_string();
                if inv.id(&s).is_some() {
                    s
                } else {
                    SPOKEN_NOISE.to_string()
                }
            })
            .collect()
    }

    pub fn words<S: AsRef<str>>(&self, words: &[S]) -> Vec<Vec<String>> {
        words.iter().map(|w| self.word(w.as_ref())).collect()
    }

    pub fn sequence<S: AsRef<str>>(&self, words: &[S]) -> Result<PhonemeSequence> {
        PhonemeSequence::from_symbols(&self.words(words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_words;

    #[test]
    fn inventory_has_unique_symbols() {
        let inv = PhonemeInventory::standard();
        assert_eq!(inv.len(), 1 + 39 + 36 + 32);
        for i in 0..inv.len() as u32 {
            assert_eq!(inv.id(inv.symbol(i).unwrap()), Some(i));
        }
    }

    #[test]
    fn lexicon_and_fallback() {
        let g = G2p::bundled();
        assert_eq!(g.word("cat"), ["K", "AE", "T"]);
        assert_eq!(g.word("zq"), ["z", "q"]);
        assert_eq!(g.word("?"), ["?"]);
        assert_eq!(g.word("é"), [SPOKEN_NOISE]);
        let s = g.sequence(&split_words("Did you see the game?")).unwrap();
        assert_eq!(s.num_words(), 6);
        assert_eq!(&s.word_map[..5], &[0, 0, 0, 1, 1]);
    }

    #[test]
    fn word_map_rules() {
        assert!(PhonemeSequence::new(vec![1, 2], vec![0, 1]).is_ok());
        assert!(PhonemeSequence::new(vec![1, 2], vec![1, 1]).is_err());
        assert!(PhonemeSequence::new(vec![1, 2], vec![0, 2]).is_err());
        assert!(PhonemeSequence::new(vec![1, 2, 3], vec![0, 1, 0]).is_err());
        assert!(PhonemeSequence::new(vec![999], vec![0]).is_err());
        assert!(PhonemeSequence::new(vec![], vec![]).is_err());
    }

    #[test]
    fn fixture_words_are_in_the_lexicon() {
        let g = G2p::bundled();
        let text = include_str!("../../fixtures/dialogues.jsonl");
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for t in v["turns"].as_array().unwrap() {
                for w in split_words(t["text"].as_str().unwrap()) {
                    assert!(g.contains(&w) || w.chars().all(|c| c.is_ascii_punctuation()), "{w}");
                }
            }
        }
    }
}
