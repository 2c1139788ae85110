//! Adam with global-norm clipping and linear warmup.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, DType, Tensor};
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor_archive::{NamedTensor, TensorArchive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Number of linear warmup steps (0 disables warmup).
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9, clip_norm: Some(1.0), warmup_steps: 0 }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub lr: f64,
}

/// First/second moment estimates plus the number of completed updates.
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    /// Applies one update to every trainable parameter that received a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<StepReport> {
        let params = store.trainable();
        let mut with_grad = Vec::new();
        let mut sq = 0f64;
        for (name, var) in &params {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
                // leaf gradients can still reference the forward graph
                with_grad.push((name, var, g.detach()));
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: "gradient norm is not finite".into(),
            });
        }
        let scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / (grad_norm + 1e-6),
            _ => 1.0,
        };
        let lr = self.config.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, var, g) in with_grad {
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let (m, v) = match self.moments.get(name.as_str()) {
                Some(mv) => mv.clone(),
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + self.config.eps)?;
            let update = ((&m / bc1)?.div(&denom)? * lr)?;
            let next = var.as_tensor().sub(&update)?;
            var.set(&next)?;
            self.moments.insert(name.clone(), (m, v));
        }
        self.step += 1;
        Ok(StepReport { grad_norm, lr })
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (name, (m, v)) in &self.moments {
            for (prefix, t) in [("m", m), ("v", v)] {
                let data = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
                a.insert(format!("{prefix}.{name}"), NamedTensor::new(t.dims().to_vec(), data)?);
            }
        }
        Ok(a)
    }

    pub fn load_archive(&mut self, a: &TensorArchive, store: &ParamStore, step: u64) -> Result<()> {
        self.moments.clear();
        let dtype = store.dtype();
        let dev = store.device().clone();
        for (key, nt) in &a.tensors {
            if let Some(name) = key.strip_prefix("m.") {
                let vkey = format!("v.{name}");
                let vt = a.require(&vkey)?;
                let m = Tensor::from_slice(&nt.data, nt.shape.as_slice(), &dev)?.to_dtype(dtype)?;
                let v = Tensor::from_slice(&vt.data, vt.shape.as_slice(), &dev)?.to_dtype(dtype)?;
                self.moments.insert(name.to_string(), (m, v));
            }
        }
        self.step = step;
        Ok(())
    }
}
