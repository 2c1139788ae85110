use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{DialogueEncoder, EncoderConfig, EncoderInput};
use super::losses::{dc_loss, retrieval_accuracy, MlmHead};
use crate::corpus::{
    assemble_current_only, assemble_history_only, assemble_sequence, dynamic_mask, pad_samples,
    window_history, Conversation, MaskedBatch, TokenizedDialogueSample, Vocabulary,
};
use crate::error::{Error, Result};
use crate::nn::optim::Adam;
use crate::nn::{scalar_f64, Ctx, ParamStore};
use crate::rng::derive_rng;

/// History-only and current-only assemblies; row `i` of both sides is one dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    pub history_side: Vec<TokenizedDialogueSample>,
    pub current_side: Vec<TokenizedDialogueSample>,
    pub dialogue_ids: Vec<String>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.history_side.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history_side.is_empty()
    }
}

/// Encoder plus masked-LM head, the unit trained during pretraining.
pub struct PretrainModel {
    pub encoder: DialogueEncoder,
    pub head: MlmHead,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLosses {
    pub total: f64,
    pub mlm: f64,
    pub dc: f64,
    pub retrieval_accuracy: f64,
    pub grad_norm: f64,
}

impl PretrainModel {
    pub const ENCODER_PREFIX: &'static str = "enc";
    pub const HEAD_PREFIX: &'static str = "mlm";

    pub fn new(store: &ParamStore, config: EncoderConfig) -> Result<Self> {
        let encoder = DialogueEncoder::new(store, Self::ENCODER_PREFIX, config)?;
        let head = MlmHead::new(store, Self::HEAD_PREFIX, config.hidden_size, config.vocab_size)?;
        Ok(Self { encoder, head })
    }

    /// `[CLS]` vectors of history and current sides, each `T' × hidden`.
    pub fn contrastive_cls(
        &self,
        batch: &ContrastiveBatch,
        store: &ParamStore,
        ctx: &Ctx,
    ) -> Result<(Tensor, Tensor)> {
        if batch.is_empty() || batch.history_side.len() != batch.current_side.len() {
            return Err(Error::Shape("contrastive batch sides must be equal and nonempty".into()));
        }
        let side = |s: &[TokenizedDialogueSample]| -> Result<Tensor> {
            let input = EncoderInput::from_padded(&pad_samples(s, 0, 0), store)?;
            self.encoder.forward(&input, ctx)?.cls_vectors()
        };
        Ok((side(&batch.history_side)?, side(&batch.current_side)?))
    }

    /// Returns `(total, mlm, dc)` loss tensors and the in-batch retrieval accuracy.
    pub fn losses(
        &self,
        masked: &MaskedBatch,
        contrastive: &ContrastiveBatch,
        store: &ParamStore,
        ctx: &Ctx,
    ) -> Result<(Tensor, Tensor, Tensor, f64)> {
        let out = self.encoder.forward(&EncoderInput::from_masked(masked, store)?, ctx)?;
        let mlm = self.head.loss(&out, &masked.labels)?;
        let (c, r) = self.contrastive_cls(contrastive, store, ctx)?;
        let dc = dc_loss(&c, &r)?;
        let acc = retrieval_accuracy(&c, &r)?;
        Ok(((&mlm + &dc)?, mlm, dc, acc))
    }
}

/// One optimizer update on `total = mlm + dc`.
pub fn pretrain_step(
    model: &PretrainModel,
    store: &ParamStore,
    optimizer: &mut Adam,
    masked: &MaskedBatch,
    contrastive: &ContrastiveBatch,
    ctx: &Ctx,
) -> Result<PretrainLosses> {
    if masked.masked_input_ids.is_empty() || contrastive.is_empty() {
        return Err(Error::Validation("pretraining batches must be nonempty".into()));
    }
    let (total, mlm, dc, acc) = model.losses(masked, contrastive, store, ctx)?;
    let total_v = scalar_f64(&total)?;
    if !total_v.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: optimizer.step,
            detail: format!("batch dialogues {:?}", contrastive.dialogue_ids),
        });
    }
    let grads = total.backward()?;
    let report = optimizer.step(store, &grads)?;
    Ok(PretrainLosses {
        total: total_v,
        mlm: scalar_f64(&mlm)?,
        dc: scalar_f64(&dc)?,
        retrieval_accuracy: acc,
        grad_norm: report.grad_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnSelection {
    /// Always use the final turn of each dialogue as the current utterance.
    Last,
    /// Draw the current turn uniformly from turns with at least one predecessor.
    Random,
}

/// Deterministic pretraining batches: randomness depends only on (seed, epoch, batch index).
pub struct PretrainBatcher<'a> {
    pub conversations: Vec<&'a Conversation>,
    pub vocab: &'a Vocabulary,
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub window: usize,
    pub selection: TurnSelection,
}

impl<'a> PretrainBatcher<'a> {
    pub fn new(
        conversations: &'a [Conversation],
        vocab: &'a Vocabulary,
        max_seq_len: usize,
        batch_size: usize,
        mask_prob: f64,
    ) -> Self {
        Self {
            conversations: conversations.iter().filter(|c| c.turns.len() >= 2).collect(),
            vocab,
            max_seq_len,
            batch_size,
            mask_prob,
            window: 14,
            selection: TurnSelection::Random,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.conversations.len().div_ceil(self.batch_size.max(1)).max(1)
    }

    pub fn batch_for_step(&self, seed: u64, step: u64) -> Result<(MaskedBatch, ContrastiveBatch)> {
        if self.conversations.is_empty() {
            return Err(Error::Data("pretraining needs dialogues with at least two turns".into()));
        }
        let per_epoch = self.batches_per_epoch() as u64;
        let (epoch, index) = (step / per_epoch, step % per_epoch);
        let mut order: Vec<usize> = (0..self.conversations.len()).collect();
        order.shuffle(&mut derive_rng(seed, &[0x0E, epoch]));
        let start = index as usize * self.batch_size;
        let chosen = &order[start..(start + self.batch_size).min(order.len())];
        // masks can come up empty on tiny batches; retry with the next sub-stream
        for attempt in 0u64.. {
            let mut rng = derive_rng(seed, &[0xBA, epoch, index, attempt]);
            let (joint, contrastive) = self.assemble(chosen, &mut rng)?;
            let masked = dynamic_mask(&joint, self.vocab, self.mask_prob, &mut rng)?;
            if masked.masked_count() > 0 {
                return Ok((masked, contrastive));
            }
            if attempt > 64 {
                break;
            }
        }
        Err(Error::NoMaskedPositions)
    }

    fn assemble<R: Rng>(
        &self,
        chosen: &[usize],
        rng: &mut R,
    ) -> Result<(Vec<TokenizedDialogueSample>, ContrastiveBatch)> {
        let mut joint = Vec::new();
        let mut cb = ContrastiveBatch { history_side: vec![], current_side: vec![], dialogue_ids: vec![] };
        for &ci in chosen {
            let conv = self.conversations[ci];
            let t = match self.selection {
                TurnSelection::Last => conv.turns.len() - 1,
                TurnSelection::Random => rng.random_range(1..conv.turns.len()),
            };
            let (hist, cur) = window_history(conv, t, self.window)?;
            joint.push(assemble_sequence(&hist, cur, self.vocab, self.max_seq_len)?);
            cb.history_side.push(assemble_history_only(&hist, self.vocab, self.max_seq_len)?);
            cb.current_side.push(assemble_current_only(cur, self.vocab, self.max_seq_len)?);
            cb.dialogue_ids.push(conv.conversation_id.clone());
        }
        Ok((joint, cb))
    }
}
