use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::Tensor;

use super::config::RunConfig;
use super::features::FeatureCache;
use crate::acoustic::{
    AcousticInputs, AcousticLosses, AcousticModel, AcousticTargets, ContextInputs, G2p, PhonemeSequence,
    Synthesis, VarianceStats,
};
use crate::coarse_context::{CoarseConfig, CoarseContextEncoder, SentenceEmbedder, SentenceEmbedding};
use crate::corpus::{assemble_sequence, window_history, Conversation, TokenizedDialogueSample, Turn, Vocabulary};
use crate::error::{Error, Result};
use crate::fine_context::{FineContextEncoder, PretrainModel};
use crate::nn::{Ctx, ParamStore};
use crate::tensor_archive::TensorArchive;

pub const FINE_PREFIX: &str = "fine";
pub const SENTENCE_PREFIX: &str = "coarse.sent";
pub const COARSE_PREFIX: &str = "coarse";

/// One current turn with its dialogue window, ready for training or inference.
#[derive(Debug, Clone)]
pub struct TtsExample {
    pub conversation_id: String,
    pub turn_index: usize,
    pub speaker: usize,
    pub phonemes: PhonemeSequence,
    /// Encoder input for H_F.
    pub sample: TokenizedDialogueSample,
    /// Turn indices of the window's history, oldest first.
    pub history_turns: Vec<usize>,
    pub targets: Option<AcousticTargets>,
}

/// Phonemes from the corpus when present, otherwise from `g2p`; one group per word.
pub fn turn_phonemes(turn: &Turn, g2p: &G2p) -> Result<PhonemeSequence> {
    let seq = match &turn.phonemes {
        Some(p) => {
            if p.len() != turn.words.len() {
                return Err(Error::Validation(format!(
                    "turn {} has {} words but {} phoneme groups",
                    turn.turn_index,
                    turn.words.len(),
                    p.len()
                )));
            }
            PhonemeSequence::from_symbols(p)?
        }
        None => g2p.sequence(&turn.words)?,
    };
    Ok(seq)
}

/// Fine encoder, frozen sentence embedder, GRU context encoder and the acoustic model.
pub struct ContextTts {
    pub config: RunConfig,
    pub fine: FineContextEncoder,
    pub sentences: SentenceEmbedder,
    pub coarse: CoarseContextEncoder,
    pub acoustic: AcousticModel,
    cache: RefCell<BTreeMap<(String, usize), SentenceEmbedding>>,
}

impl ContextTts {
    /// `config` must already carry the corpus vocabulary size and speaker count.
    pub fn new(store: &ParamStore, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let enc = config.encoder;
        let d = config.acoustic.d_model;
        let fine = FineContextEncoder::new(store, FINE_PREFIX, enc, d)?;
        let sentences = SentenceEmbedder::new(store, SENTENCE_PREFIX, enc)?;
        let coarse = CoarseContextEncoder::new(
            store,
            COARSE_PREFIX,
            CoarseConfig {
                d_sent: enc.hidden_size,
                num_speakers: config.acoustic.num_speakers,
                d_gru: config.coarse.d_gru,
                d_ctx: config.coarse.d_ctx,
            },
        )?;
        let acoustic = AcousticModel::new(store, config.acoustic)?;
        Ok(Self { config, fine, sentences, coarse, acoustic, cache: RefCell::new(BTreeMap::new()) })
    }

    /// Copies pretrained encoder weights into both the fine encoder and the sentence embedder.
    pub fn load_pretrained(&self, store: &ParamStore, params: &TensorArchive) -> Result<()> {
        let enc = format!("{}.", PretrainModel::ENCODER_PREFIX);
        for target in [format!("{FINE_PREFIX}.enc."), format!("{SENTENCE_PREFIX}.")] {
            let mut found = 0usize;
            for (k, _) in params.tensors.iter().filter(|(k, _)| k.starts_with(&enc)) {
                let name = format!("{target}{}", &k[enc.len()..]);
                if !store.contains(&name) {
                    return Err(Error::Archive(format!("pretrained tensor {k} has no counterpart {name}")));
                }
                found += 1;
            }
            if found == 0 {
                return Err(Error::Archive("archive holds no pretrained encoder tensors".into()));
            }
            store.load_archive_renamed(params, |k| k.strip_prefix(&enc).map(|rest| format!("{target}{rest}")))?;
        }
        self.cache.borrow_mut().clear();
        Ok(())
    }

    pub fn use_context(&self) -> bool {
        self.config.tts.use_context
    }

    fn sentence(&self, conv: &Conversation, turn: &Turn, vocab: &Vocabulary, store: &ParamStore) -> Result<SentenceEmbedding> {
        let key = (conv.conversation_id.clone(), turn.turn_index);
        if let Some(e) = self.cache.borrow().get(&key) {
            return Ok(e.clone());
        }
        let e = self.sentences.embed_utterance(turn, vocab, store)?;
        self.cache.borrow_mut().insert(key, e.clone());
        Ok(e)
    }

    /// Builds the example for turn `t` of `conv` under window `turn_window`.
    pub fn prepare(
        &self,
        conv: &Conversation,
        t: usize,
        turn_window: usize,
        vocab: &Vocabulary,
        g2p: &G2p,
        features: Option<&FeatureCache>,
    ) -> Result<TtsExample> {
        let (history, current) = window_history(conv, t, turn_window)?;
        let phonemes = turn_phonemes(current, g2p)?;
        let sample = assemble_sequence(&history, current, vocab, self.config.encoder.max_seq_len)?;
        if sample.word_positions.len() != phonemes.num_words() {
            return Err(Error::Validation(format!(
                "{} turn {t}: {} encoder words but {} phoneme words",
                conv.conversation_id,
                sample.word_positions.len(),
                phonemes.num_words()
            )));
        }
        let targets = match features.and_then(|f| f.get(&conv.conversation_id, current.turn_index)) {
            Some(f) => {
                if let Some(d) = &current.durations {
                    if d.len() != phonemes.len() {
                        return Err(Error::Validation(format!(
                            "{} turn {t}: {} durations for {} phonemes",
                            conv.conversation_id,
                            d.len(),
                            phonemes.len()
                        )));
                    }
                }
                Some(AcousticTargets {
                    mel: f.mel.clone(),
                    pitch: f.pitch.clone(),
                    energy: f.energy.clone(),
                    durations: current.durations.clone(),
                })
            }
            None => None,
        };
        Ok(TtsExample {
            conversation_id: conv.conversation_id.clone(),
            turn_index: current.turn_index,
            speaker: current.speaker_id,
            phonemes,
            sample,
            history_turns: history.iter().map(|h| h.turn_index).collect(),
            targets,
        })
    }

    /// H_F and H_C for `ex`, or `None` when context is switched off.
    pub fn context(
        &self,
        ex: &TtsExample,
        conv: &Conversation,
        vocab: &Vocabulary,
        store: &ParamStore,
        ctx: &Ctx,
    ) -> Result<Option<ContextInputs>> {
        if !self.use_context() {
            return Ok(None);
        }
        let fine = self.fine.extract(&ex.sample, store, ctx)?.vectors;
        let turn = |i: usize| {
            conv.turns.iter().find(|t| t.turn_index == i).ok_or_else(|| {
                Error::Validation(format!("{} has no turn {i}", conv.conversation_id))
            })
        };
        let history = ex
            .history_turns
            .iter()
            .map(|&i| self.sentence(conv, turn(i)?, vocab, store))
            .collect::<Result<Vec<_>>>()?;
        let current = self.sentence(conv, turn(ex.turn_index)?, vocab, store)?;
        let coarse = self.coarse.coarse_embedding(&history, &current)?.vector;
        Ok(Some(ContextInputs { fine, coarse }))
    }

    pub fn losses(
        &self,
        ex: &TtsExample,
        conv: &Conversation,
        vocab: &Vocabulary,
        stats: &VarianceStats,
        store: &ParamStore,
        ctx: &Ctx,
    ) -> Result<AcousticLosses> {
        let targets = ex.targets.as_ref().ok_or_else(|| {
            Error::Data(format!("{} turn {} has no acoustic features", ex.conversation_id, ex.turn_index))
        })?;
        let inputs = AcousticInputs {
            phonemes: &ex.phonemes,
            speaker: ex.speaker,
            context: self.context(ex, conv, vocab, store, ctx)?,
        };
        self.acoustic.forward_train(&inputs, targets, stats, ctx)
    }

    pub fn synthesize(
        &self,
        ex: &TtsExample,
        conv: &Conversation,
        vocab: &Vocabulary,
        stats: &VarianceStats,
        store: &ParamStore,
        durations: Option<&[u32]>,
    ) -> Result<Synthesis> {
        let ctx = Ctx::eval();
        let inputs = AcousticInputs {
            phonemes: &ex.phonemes,
            speaker: ex.speaker,
            context: self.context(ex, conv, vocab, store, &ctx)?,
        };
        self.acoustic.synthesize(&inputs, stats, durations, &ctx)
    }
}

/// Mean of the batch's total losses.
pub fn mean_total(losses: &[AcousticLosses]) -> Result<Tensor> {
    let parts: Vec<&Tensor> = losses.iter().map(|l| &l.total).collect();
    if parts.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    Ok((Tensor::stack(&parts, 0)?.sum_all()? / parts.len() as f64)?)
}
