//! Dialogue-BERT encoder: pretraining objectives and fine-grained embedding extraction.

mod encoder;
mod extract;
mod losses;
mod pretrain;

pub use encoder::{DialogueEncoder, EncoderConfig, EncoderInput, EncoderOutput};
pub use extract::{FineContextEmbedding, FineContextEncoder};
pub use losses::{dc_loss, masked_nll, retrieval_accuracy, MlmHead};
pub use pretrain::{
    pretrain_step, ContrastiveBatch, PretrainBatcher, PretrainLosses, PretrainModel, TurnSelection,
};
