use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::config::AcousticConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Ctx, Dropout, Embedding, Init, LayerNorm, Linear, ParamStore};

/// Two conv + ReLU + layer norm + dropout stages and a scalar head; `len × d → len`.
#[derive(Clone, Debug)]
pub struct VariancePredictor {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    out: Linear,
    dropout: Dropout,
}

impl VariancePredictor {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        let (f, k) = (cfg.variance_filter, cfg.variance_kernel);
        Ok(Self {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), cfg.d_model, f, k)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), f)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), f, f, k)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), f)?,
            out: Linear::new(store, &format!("{name}.out"), f, 1)?,
            dropout: Dropout::new(cfg.dropout),
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.dropout.forward(&self.ln1.forward(&self.conv1.forward_seq(x)?.relu()?)?, ctx)?;
        let h = self.dropout.forward(&self.ln2.forward(&self.conv2.forward_seq(&h)?.relu()?)?, ctx)?;
        Ok(self.out.forward(&h)?.squeeze(1)?)
    }
}

/// Duration targets are predicted as `ln(d + 1)`.
pub fn duration_targets(durations: &[u32]) -> Vec<f64> {
    durations.iter().map(|&d| (d as f64 + 1.0).ln()).collect()
}

/// `max(1, round(exp(p) − 1))` per phoneme.
pub fn durations_from_log(pred: &[f32]) -> Vec<u32> {
    pred.iter()
        .map(|&p| {
            let d = ((p as f64).exp() - 1.0).round();
            if d.is_finite() && d >= 1.0 {
                d.min(u32::MAX as f64) as u32
            } else {
                1
            }
        })
        .collect()
}

pub fn mse(pred: &Tensor, target: &[f64]) -> Result<Tensor> {
    let t = Tensor::from_slice(target, target.len(), pred.device())?.to_dtype(pred.dtype())?;
    if pred.dims() != t.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), t.dims())));
    }
    Ok((pred - t)?.sqr()?.mean_all()?)
}

/// Repeats row `t` of `x` exactly `durations[t]` times.
pub fn length_regulate(x: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let p = x.dim(0)?;
    if durations.len() != p {
        return Err(Error::Shape(format!("{p} rows but {} durations", durations.len())));
    }
    let idx: Vec<u32> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i as u32, d as usize))
        .collect();
    if idx.is_empty() {
        return Err(Error::Validation("durations sum to zero frames".into()));
    }
    let n = idx.len();
    Ok(x.index_select(&Tensor::from_vec(idx, n, x.device())?, 0)?)
}

/// Range and moments of one variance target over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl ScalarStats {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f32>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            let v = v as f64;
            if !v.is_finite() {
                return Err(Error::Data("non-finite variance target".into()));
            }
            n += 1;
            sum += v;
            sq += v * v;
            min = min.min(v);
            max = max.max(v);
        }
        if n == 0 {
            return Err(Error::Data("no variance targets".into()));
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        Ok(Self { min, max, mean, std: if std > 1e-8 { std } else { 1.0 } })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// `clamp(floor((v − min) / (max − min) · bins), 0, bins − 1)`.
    pub fn bin(&self, v: f64, bins: usize) -> usize {
        let span = self.max - self.min;
        if span <= 0.0 || !v.is_finite() {
            return 0;
        }
        let b = ((v - self.min) / span * bins as f64).floor();
        b.clamp(0.0, (bins - 1) as f64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub pitch: ScalarStats,
    pub energy: ScalarStats,
}

/// Per-frame pitch and energy predictors whose quantised values are embedded and added.
#[derive(Clone, Debug)]
pub struct VarianceAdaptor {
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_emb: Embedding,
    energy_emb: Embedding,
    bins: usize,
}

#[derive(Debug, Clone)]
pub struct VarianceOutput {
    pub adapted: Tensor,
    /// Normalised predictions, one per frame.
    pub pitch_pred: Tensor,
    pub energy_pred: Tensor,
    /// (pitch, energy) MSE when targets were supplied.
    pub losses: Option<(Tensor, Tensor)>,
}

impl VarianceAdaptor {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        let init = Init::Normal(0.1);
        Ok(Self {
            pitch: VariancePredictor::new(store, &format!("{name}.pitch"), cfg)?,
            energy: VariancePredictor::new(store, &format!("{name}.energy"), cfg)?,
            pitch_emb: Embedding::new(store, &format!("{name}.pitch_emb"), cfg.variance_bins, cfg.d_model, init)?,
            energy_emb: Embedding::new(store, &format!("{name}.energy_emb"), cfg.variance_bins, cfg.d_model, init)?,
            bins: cfg.variance_bins,
        })
    }

    fn embed(&self, emb: &Embedding, values: &[f64], stats: &ScalarStats) -> Result<Tensor> {
        let idx: Vec<u32> = values.iter().map(|&v| stats.bin(v, self.bins) as u32).collect();
        let n = idx.len();
        emb.forward(&Tensor::from_vec(idx, n, emb.table.device())?)
    }

    /// `targets` holds raw per-frame (pitch, energy); without them the predictions are used.
    pub fn forward(
        &self,
        x: &Tensor,
        targets: Option<(&[f32], &[f32])>,
        stats: &VarianceStats,
        ctx: &Ctx,
    ) -> Result<VarianceOutput> {
        let frames = x.dim(0)?;
        let pitch_pred = self.pitch.forward(x, ctx)?;
        let energy_pred = self.energy.forward(x, ctx)?;
        let (pitch_raw, energy_raw, losses) = match targets {
            Some((p, e)) => {
                if p.len() != frames || e.len() != frames {
                    return Err(Error::Shape(format!(
                        "{frames} frames but {} pitch / {} energy targets",
                        p.len(),
                        e.len()
                    )));
                }
                let p: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                let e: Vec<f64> = e.iter().map(|&v| v as f64).collect();
                let pz: Vec<f64> = p.iter().map(|&v| stats.pitch.normalize(v)).collect();
                let ez: Vec<f64> = e.iter().map(|&v| stats.energy.normalize(v)).collect();
                let losses = (mse(&pitch_pred, &pz)?, mse(&energy_pred, &ez)?);
                (p, e, Some(losses))
            }
            None => {
                let host = |t: &Tensor| -> Result<Vec<f64>> {
                    Ok(t.to_dtype(candle_core::DType::F64)?.to_vec1()?)
                };
                let p = host(&pitch_pred)?.into_iter().map(|z| stats.pitch.denormalize(z)).collect();
                let e = host(&energy_pred)?.into_iter().map(|z| stats.energy.denormalize(z)).collect();
                (p, e, None)
            }
        };
        let adapted = ((x + self.embed(&self.pitch_emb, &pitch_raw, &stats.pitch)?)?
            + self.embed(&self.energy_emb, &energy_raw, &stats.energy)?)?;
        Ok(VarianceOutput { adapted, pitch_pred, energy_pred, losses })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::scalar_f64;
    use candle_core::DType;

    fn stats() -> VarianceStats {
        let s = ScalarStats { min: 0.0, max: 6.0, mean: 3.0, std: 2.0 };
        VarianceStats { pitch: s, energy: ScalarStats { min: 0.0, max: 100.0, mean: 20.0, std: 10.0 } }
    }

    #[test]
    fn length_regulation() {
        let x = Tensor::new(&[[1f32, 1.0], [2.0, 2.0], [3.0, 3.0]], &candle_core::Device::Cpu).unwrap();
        let y: Vec<Vec<f32>> = length_regulate(&x, &[2, 0, 3]).unwrap().to_vec2().unwrap();
        assert_eq!(y, vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![3.0, 3.0], vec![3.0, 3.0], vec![3.0, 3.0]]);
        let same: Vec<Vec<f32>> = length_regulate(&x, &[1, 1, 1]).unwrap().to_vec2().unwrap();
        assert_eq!(same, x.to_vec2::<f32>().unwrap());
        assert!(length_regulate(&x, &[0, 0, 0]).is_err());
        assert!(length_regulate(&x, &[1, 1]).is_err());
    }

    #[test]
    fn bins_hit_the_bounds() {
        let s = ScalarStats::from_values(&[1.0, 4.0, 2.5, 7.0]).unwrap();
        assert_eq!(s.bin(1.0, 256), 0);
        assert_eq!(s.bin(7.0, 256), 255);
        assert_eq!(s.bin(-3.0, 256), 0);
        assert_eq!(s.bin(99.0, 256), 255);
        assert_eq!(s.bin(4.0, 256), 128);
        assert!(ScalarStats::from_values(&[f32::NAN]).is_err());
    }

    #[test]
    fn duration_transform() {
        let t = duration_targets(&[2, 3]);
        let pred: Vec<f32> = t.iter().map(|&v| v as f32).collect();
        assert_eq!(durations_from_log(&pred), vec![2, 3]);
        assert_eq!(durations_from_log(&[-5.0, 0.0, f32::NAN]), vec![1, 1, 1]);
        let p = Tensor::new(&[3f64.ln(), 4f64.ln()], &candle_core::Device::Cpu).unwrap();
        assert_eq!(scalar_f64(&mse(&p, &t).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn zero_embeddings_leave_input_unchanged() {
        let store = ParamStore::new(DType::F64, 4);
        let cfg = AcousticConfig::toy(1);
        let va = VarianceAdaptor::new(&store, "var", &cfg).unwrap();
        store.set_from_f64("var.pitch_emb.table", &vec![0.0; 256 * 256]).unwrap();
        store.set_from_f64("var.energy_emb.table", &vec![0.0; 256 * 256]).unwrap();
        let x = store.get_or_init("x", &[5, 256], Init::Normal(1.0)).unwrap();
        let out = va.forward(&x, None, &stats(), &Ctx::eval()).unwrap();
        assert_eq!(out.adapted.to_vec2::<f64>().unwrap(), x.to_vec2::<f64>().unwrap());
        let p = [3.0f32; 5];
        let e = [20.0f32; 5];
        let out = va.forward(&x, Some((&p, &e)), &stats(), &Ctx::eval()).unwrap();
        assert!(out.losses.is_some());
        assert!(va.forward(&x, Some((&p[..4], &e)), &stats(), &Ctx::eval()).is_err());
    }
}
