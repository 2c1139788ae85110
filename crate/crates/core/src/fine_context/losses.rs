use candle_core::{Tensor, D};

use super::encoder::EncoderOutput;
use crate::corpus::IGNORE_LABEL;
use crate::error::{Error, Result};
use crate::nn::{gelu, log_softmax_last, Init, LayerNorm, Linear, ParamStore};

/// Dense → GELU → layer norm → vocabulary projection.
#[derive(Clone, Debug)]
pub struct MlmHead {
    dense: Linear,
    ln: LayerNorm,
    decoder: Linear,
}

impl MlmHead {
    pub fn new(store: &ParamStore, prefix: &str, hidden: usize, vocab: usize) -> Result<Self> {
        Ok(Self {
            dense: Linear::with_init(store, &format!("{prefix}.dense"), hidden, hidden, Init::Normal(0.02))?,
            ln: LayerNorm::new(store, &format!("{prefix}.ln"), hidden)?,
            decoder: Linear::with_init(store, &format!("{prefix}.decoder"), hidden, vocab, Init::Normal(0.02))?,
        })
    }

    pub fn logits(&self, hidden: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.ln.forward(&gelu(&self.dense.forward(hidden)?)?)?)
    }

    /// Mean negative log-likelihood over labelled positions.
    pub fn loss(&self, output: &EncoderOutput, labels: &[Vec<i64>]) -> Result<Tensor> {
        let (logits, targets) = self.masked_logits(output, labels)?;
        masked_nll(&logits, &targets)
    }

    /// Logits at labelled positions (`count × vocab`) together with their target ids.
    pub fn masked_logits(&self, output: &EncoderOutput, labels: &[Vec<i64>]) -> Result<(Tensor, Vec<u32>)> {
        let (b, l, h) = output.hidden_states.dims3()?;
        if labels.len() != b || labels.iter().any(|r| r.len() != l) {
            return Err(Error::Shape("labels do not match hidden states".into()));
        }
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (i, row) in labels.iter().enumerate() {
            for (j, &lab) in row.iter().enumerate() {
                if lab != IGNORE_LABEL {
                    rows.push((i * l + j) as u32);
                    targets.push(lab as u32);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::NoMaskedPositions);
        }
        let idx = Tensor::from_vec(rows, targets.len(), output.hidden_states.device())?;
        let picked = output.hidden_states.reshape((b * l, h))?.index_select(&idx, 0)?;
        Ok((self.logits(&picked)?, targets))
    }
}

/// `-mean_m log softmax(logits_m)[target_m]` for a `count × vocab` logit matrix.
pub fn masked_nll(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let (m, _) = logits.dims2()?;
    if m != targets.len() || m == 0 {
        return Err(Error::Shape(format!("{m} logit rows for {} targets", targets.len())));
    }
    let idx = Tensor::from_vec(targets.to_vec(), (m, 1), logits.device())?;
    let picked = log_softmax_last(logits)?.gather(&idx, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

/// Dialogue contrastive loss: `-mean_i log softmax_row(C Rᵀ)[i, i]`.
pub fn dc_loss(history_cls: &Tensor, current_cls: &Tensor) -> Result<Tensor> {
    let (t, h) = history_cls.dims2()?;
    if current_cls.dims2()? != (t, h) {
        return Err(Error::Shape(format!(
            "history {:?} vs current {:?}",
            history_cls.dims(),
            current_cls.dims()
        )));
    }
    let logits = history_cls.matmul(&current_cls.t()?)?;
    let idx = Tensor::from_vec((0..t as u32).collect::<Vec<_>>(), (t, 1), logits.device())?;
    let diag = log_softmax_last(&logits)?.gather(&idx, 1)?;
    Ok(diag.mean_all()?.neg()?)
}

/// Fraction of rows of `C Rᵀ` whose argmax is the diagonal.
pub fn retrieval_accuracy(history_cls: &Tensor, current_cls: &Tensor) -> Result<f64> {
    let logits = history_cls.matmul(&current_cls.t()?)?;
    let best = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
    let hits = best.iter().enumerate().filter(|(i, &j)| *i as u32 == j).count();
    Ok(hits as f64 / best.len().max(1) as f64)
}
