//! Utterance-level context: frozen sentence embeddings, a GRU over the history and a
//! projection of `[history state; current sentence; current speaker]` to `d_ctx`.

mod gru;

pub use gru::Gru;

use candle_core::Tensor;

use crate::corpus::{Turn, Vocabulary};
use crate::error::{Error, Result};
use crate::fine_context::{DialogueEncoder, EncoderConfig, EncoderInput};
use crate::nn::{Ctx, Linear, ParamStore};

/// Sentence vector plus the speaker indicator appended before aggregation.
#[derive(Debug, Clone)]
pub struct SentenceEmbedding {
    /// `d_sent`, detached from any graph.
    pub vector: Tensor,
    pub speaker_onehot: Vec<f32>,
}

impl SentenceEmbedding {
    pub fn new(vector: Tensor, speaker: usize, num_speakers: usize) -> Result<Self> {
        if speaker >= num_speakers {
            return Err(Error::Validation(format!(
                "speaker {speaker} outside 0..{num_speakers}"
            )));
        }
        let mut speaker_onehot = vec![0.0; num_speakers];
        speaker_onehot[speaker] = 1.0;
        Ok(Self { vector: vector.flatten_all()?.detach(), speaker_onehot })
    }

    pub fn dim(&self) -> usize {
        self.vector.elem_count()
    }

    /// `1 × (d_sent + num_speakers)`.
    pub fn features(&self) -> Result<Tensor> {
        let oh = Tensor::from_slice(&self.speaker_onehot, self.speaker_onehot.len(), self.vector.device())?
            .to_dtype(self.vector.dtype())?;
        Ok(Tensor::cat(&[&self.vector, &oh], 0)?.unsqueeze(0)?)
    }
}

/// H_C, a single `d_ctx` vector.
#[derive(Debug, Clone)]
pub struct CoarseContextEmbedding {
    pub vector: Tensor,
}

/// The pretrained dialogue encoder run without gradients on `[CLS] words [SEP]`.
#[derive(Clone, Debug)]
pub struct SentenceEmbedder {
    encoder: DialogueEncoder,
}

impl SentenceEmbedder {
    /// Builds (or reuses) the encoder parameters under `prefix` and marks them frozen.
    pub fn new(store: &ParamStore, prefix: &str, config: EncoderConfig) -> Result<Self> {
        let encoder = DialogueEncoder::new(store, prefix, config)?.frozen();
        store.set_trainable_prefix(prefix, false);
        Ok(Self { encoder })
    }

    pub fn dim(&self) -> usize {
        self.encoder.config.hidden_size
    }

    /// Words beyond `max_seq_len - 2` are dropped from the end.
    pub fn embed_utterance(&self, turn: &Turn, vocab: &Vocabulary, store: &ParamStore) -> Result<SentenceEmbedding> {
        if turn.words.is_empty() {
            return Err(Error::Validation(format!("turn {} has no words", turn.turn_index)));
        }
        let keep = self.encoder.config.max_seq_len.saturating_sub(2);
        let mut ids = vec![vocab.cls_id()];
        ids.extend(vocab.encode_words(&turn.words).into_iter().take(keep));
        ids.push(vocab.sep_id());
        let out = self.encoder.forward(&EncoderInput::from_ids(&ids, store)?, &Ctx::eval())?;
        SentenceEmbedding::new(out.cls_vectors()?, turn.speaker_id, vocab.num_speakers())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseConfig {
    pub d_sent: usize,
    pub num_speakers: usize,
    pub d_gru: usize,
    pub d_ctx: usize,
}

#[derive(Clone, Debug)]
pub struct CoarseContextEncoder {
    pub config: CoarseConfig,
    gru: Gru,
    proj: Linear,
}

impl CoarseContextEncoder {
    pub fn new(store: &ParamStore, prefix: &str, config: CoarseConfig) -> Result<Self> {
        let input = config.d_sent + config.num_speakers;
        Ok(Self {
            gru: Gru::new(store, &format!("{prefix}.gru"), input, config.d_gru)?,
            proj: Linear::new(store, &format!("{prefix}.proj"), config.d_gru + input, config.d_ctx)?,
            config,
        })
    }

    /// Final GRU state over the chronological history; zeros when the history is empty.
    pub fn aggregate_history(&self, history: &[SentenceEmbedding]) -> Result<Tensor> {
        let xs = history.iter().map(|e| self.check(e)?.features()).collect::<Result<Vec<_>>>()?;
        Ok(self.gru.run_from(self.gru.zero_state(1)?, &xs)?.squeeze(0)?)
    }

    pub fn coarse_embedding(
        &self,
        history: &[SentenceEmbedding],
        current: &SentenceEmbedding,
    ) -> Result<CoarseContextEmbedding> {
        let h = self.aggregate_history(history)?;
        let cur = self.check(current)?.features()?.squeeze(0)?;
        let joint = Tensor::cat(&[&h, &cur], 0)?.unsqueeze(0)?;
        Ok(CoarseContextEmbedding { vector: self.proj.forward(&joint)?.squeeze(0)? })
    }

    /// Embeds the turns with `embedder` and then applies [`Self::coarse_embedding`].
    pub fn from_turns(
        &self,
        embedder: &SentenceEmbedder,
        history: &[&Turn],
        current: &Turn,
        vocab: &Vocabulary,
        store: &ParamStore,
    ) -> Result<CoarseContextEmbedding> {
        let hist = history
            .iter()
            .map(|t| embedder.embed_utterance(t, vocab, store))
            .collect::<Result<Vec<_>>>()?;
        self.coarse_embedding(&hist, &embedder.embed_utterance(current, vocab, store)?)
    }

    fn check<'a>(&self, e: &'a SentenceEmbedding) -> Result<&'a SentenceEmbedding> {
        if e.dim() != self.config.d_sent || e.speaker_onehot.len() != self.config.num_speakers {
            return Err(Error::Shape(format!(
                "sentence embedding {}+{} does not match {}+{}",
                e.dim(),
                e.speaker_onehot.len(),
                self.config.d_sent,
                self.config.num_speakers
            )));
        }
        Ok(e)
    }
}
