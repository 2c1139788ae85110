//! Dialogue corpus ingestion, vocabulary, sequence assembly and dynamic masking.

mod assemble;
mod masking;
mod vocab;

pub use assemble::{
    assemble_current_only, assemble_history_only, assemble_sequence, window_history,
    TokenizedDialogueSample,
};
pub use masking::{dynamic_mask, pad_samples, MaskedBatch, PaddedBatch, IGNORE_LABEL};
pub use vocab::{speaker_token, split_words, tokenize, Vocabulary, CLS, MASK, PAD, SEP, UNK};

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    /// Dense 0-based speaker identity.
    pub speaker_id: usize,
    pub text: String,
    pub words: Vec<String>,
    /// Per-word phoneme symbols, when supplied by the corpus.
    pub phonemes: Option<Vec<Vec<String>>>,
    pub audio_path: Option<PathBuf>,
    /// Per-phoneme frame counts, when supplied by the corpus.
    pub durations: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self, num_speakers: usize) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::Validation(format!(
                "conversation {} has no turns",
                self.conversation_id
            )));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn_index != i {
                return Err(Error::Validation(format!(
                    "conversation {}: turn_index {} at position {i}",
                    self.conversation_id, t.turn_index
                )));
            }
            if t.speaker_id >= num_speakers {
                return Err(Error::Validation(format!(
                    "conversation {}: speaker {} outside [0, {num_speakers})",
                    self.conversation_id, t.speaker_id
                )));
            }
            if !t.text.trim().is_empty() && t.words.is_empty() {
                return Err(Error::Validation(format!(
                    "conversation {} turn {i}: no words after tokenization",
                    self.conversation_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RawConversation {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    speaker: i64,
    text: String,
    #[serde(default)]
    audio: Option<String>,
    #[serde(default)]
    turn_index: Option<usize>,
    #[serde(default)]
    phonemes: Option<Vec<Vec<String>>>,
    #[serde(default)]
    durations: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// What ingestion did to the raw data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: Vec<PathBuf>,
    /// Raw speaker id → dense id.
    pub speaker_map: BTreeMap<i64, usize>,
    pub conversations: usize,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub conversations: Vec<Conversation>,
    pub report: IngestReport,
}

impl LoadedCorpus {
    pub fn num_speakers(&self) -> usize {
        self.report.speaker_map.len()
    }
}

/// Reads every `*.jsonl` file under `root` (or `root` itself if it is a file), in name order.
pub fn load_corpus(root: &Path, format: CorpusFormat) -> Result<LoadedCorpus> {
    let CorpusFormat::Jsonl = format;
    let files = if root.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    } else if root.exists() {
        vec![root.to_path_buf()]
    } else {
        return Err(Error::io(root, std::io::Error::from(std::io::ErrorKind::NotFound)));
    };

    let mut raw = Vec::new();
    for f in &files {
        let base = f.parent().unwrap_or(Path::new("."));
        let file = std::fs::File::open(f).map_err(|e| Error::io(f, e))?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(f, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let conv: RawConversation = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", f.display()),
            })?;
            raw.push((base.to_path_buf(), conv));
        }
    }
    let mut ids: Vec<i64> = raw.iter().flat_map(|(_, c)| c.turns.iter().map(|t| t.speaker)).collect();
    ids.sort_unstable();
    ids.dedup();
    let speaker_map: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut conversations = Vec::with_capacity(raw.len());
    let mut turns_total = 0;
    for (base, rc) in raw {
        let turns = rc
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| Turn {
                turn_index: t.turn_index.unwrap_or(i),
                speaker_id: speaker_map[&t.speaker],
                words: split_words(&t.text),
                text: t.text,
                phonemes: t.phonemes,
                audio_path: t.audio.map(|a| {
                    let p = PathBuf::from(a);
                    if p.is_absolute() { p } else { base.join(p) }
                }),
                durations: t.durations,
            })
            .collect::<Vec<_>>();
        let conv = Conversation { conversation_id: rc.id, turns };
        conv.validate(speaker_map.len())?;
        turns_total += conv.turns.len();
        conversations.push(conv);
    }
    Ok(LoadedCorpus {
        report: IngestReport {
            files,
            speaker_map,
            conversations: conversations.len(),
            turns: turns_total,
        },
        conversations,
    })
}

/// A vocabulary covering every word of `conversations`.
pub fn build_vocabulary(conversations: &[Conversation], num_speakers: usize) -> Vocabulary {
    Vocabulary::build(
        conversations
            .iter()
            .flat_map(|c| c.turns.iter().flat_map(|t| t.words.iter().map(String::as_str))),
        num_speakers,
    )
}

/// Ingested corpus as persisted by the `ingest` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub conversations: Vec<Conversation>,
    pub vocab: Vocabulary,
    pub report: IngestReport,
    pub max_seq_len: usize,
}

impl CorpusBundle {
    pub fn from_loaded(loaded: LoadedCorpus, max_seq_len: usize) -> Self {
        let vocab = build_vocabulary(&loaded.conversations, loaded.num_speakers());
        Self { conversations: loaded.conversations, vocab, report: loaded.report, max_seq_len }
    }

    pub fn num_speakers(&self) -> usize {
        self.vocab.num_speakers()
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conversation_id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = bincode::serialize(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut b: Self = bincode::deserialize(&bytes).map_err(|e| Error::Data(e.to_string()))?;
        b.vocab.reindex();
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_two_conversations_in_order() {
        let d = tempfile::tempdir().unwrap();
        let turns = |n: usize| {
            (0..n)
                .map(|i| format!(r#"{{"speaker": {}, "text": "line {i}", "audio": null}}"#, i % 2))
                .collect::<Vec<_>>()
                .join(",")
        };
        let body = format!(
            "{{\"id\": \"a\", \"turns\": [{}]}}\n{{\"id\": \"b\", \"turns\": [{}]}}\n",
            turns(3),
            turns(5)
        );
        write(d.path(), "c.jsonl", &body);
        let c = load_corpus(d.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.conversations.len(), 2);
        assert_eq!(c.conversations[0].turns.len(), 3);
        assert_eq!(c.conversations[1].turns.len(), 5);
        assert_eq!(c.conversations[1].conversation_id, "b");
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "e.jsonl", "");
        assert!(load_corpus(&p, CorpusFormat::Jsonl).unwrap().conversations.is_empty());
    }

    #[test]
    fn speakers_are_remapped_densely() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "s.jsonl",
            r#"{"id": "x", "turns": [{"speaker": 7, "text": "hi"}, {"speaker": 3, "text": "yo"}]}"#,
        );
        let c = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.report.speaker_map, BTreeMap::from([(3, 0), (7, 1)]));
        assert_eq!(c.conversations[0].turns[0].speaker_id, 1);
        assert_eq!(c.conversations[0].turns[1].speaker_id, 0);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "m.jsonl",
            "{\"id\": \"x\", \"turns\": [{\"speaker\": 0, \"text\": \"a\"}]}\n{oops\n",
        );
        match load_corpus(&p, CorpusFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_consecutive_turn_index_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "n.jsonl",
            r#"{"id": "x", "turns": [{"speaker": 0, "text": "a", "turn_index": 0}, {"speaker": 0, "text": "b", "turn_index": 2}]}"#,
        );
        assert!(matches!(load_corpus(&p, CorpusFormat::Jsonl), Err(Error::Validation(_))));
    }

    #[test]
    fn conversation_without_turns_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "z.jsonl", r#"{"id": "x", "turns": []}"#);
        assert!(load_corpus(&p, CorpusFormat::Jsonl).is_err());
    }

    #[test]
    fn relative_audio_resolved_against_file_dir() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "r.jsonl",
            r#"{"id": "x", "turns": [{"speaker": 0, "text": "a", "audio": "w/a.wav"}]}"#,
        );
        let c = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.conversations[0].turns[0].audio_path, Some(d.path().join("w/a.wav")));
    }

    #[test]
    fn bundle_roundtrip() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "b.jsonl",
            r#"{"id": "x", "turns": [{"speaker": 0, "text": "Hello there"}, {"speaker": 1, "text": "Hi!"}]}"#,
        );
        let b = CorpusBundle::from_loaded(load_corpus(&p, CorpusFormat::Jsonl).unwrap(), 256);
        let out = d.path().join("corpus.bin");
        b.save(&out).unwrap();
        let back = CorpusBundle::load(&out).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.vocab.id("hello"), b.vocab.id("hello"));
    }
}
