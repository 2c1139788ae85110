//! Parameter storage and the differentiable building blocks shared by every model.

mod attention;
mod layers;
pub mod optim;

pub use attention::{attention_bias, MultiHeadAttention};
pub use layers::{Conv1d, Dropout, Embedding, LayerNorm, Linear};

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor_archive::{NamedTensor, TensorArchive};

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    XavierUniform { fan_in: usize, fan_out: usize },
    Constant(f64),
    /// Uniform in ±bound.
    Uniform(f64),
}

/// Named trainable tensors, kept in name order so iteration is deterministic.
pub struct ParamStore {
    vars: RefCell<BTreeMap<String, Entry>>,
    dtype: DType,
    device: Device,
    rng: RefCell<ChaCha8Rng>,
}

#[derive(Clone)]
struct Entry {
    var: Var,
    trainable: bool,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: RefCell::new(BTreeMap::new()),
            dtype,
            device: Device::Cpu,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the named parameter, creating it with `init` if absent.
    pub fn get_or_init(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(e) = self.vars.borrow().get(name) {
            if e.var.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, requested {shape:?}",
                    e.var.dims()
                )));
            }
            return Ok(e.var.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values = {
            let mut rng = self.rng.borrow_mut();
            fill(&mut *rng, n, init)
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars
            .borrow_mut()
            .insert(name.to_string(), Entry { var, trainable: true });
        Ok(out)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.borrow().contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.vars.borrow().get(name).map(|e| e.var.as_tensor().clone())
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.borrow().get(name).map(|e| e.var.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.borrow().keys().cloned().collect()
    }

    /// Trainable parameters in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.vars
            .borrow()
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.clone(), e.var.clone()))
            .collect()
    }

    /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
    pub fn set_trainable_prefix(&self, prefix: &str, trainable: bool) {
        for (k, e) in self.vars.borrow_mut().iter_mut() {
            if k.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.vars.borrow().get(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.borrow().values().map(|e| e.var.elem_count()).sum()
    }

    /// Overwrites a parameter's value in place. Layers holding the tensor see the change.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let vars = self.vars.borrow();
        let e = vars
            .get(name)
            .ok_or_else(|| Error::Archive(format!("unknown parameter {name}")))?;
        if e.var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, value has {:?}",
                e.var.dims(),
                value.dims()
            )));
        }
        e.var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn set_from_f64(&self, name: &str, values: &[f64]) -> Result<()> {
        let shape = self
            .tensor(name)
            .ok_or_else(|| Error::Archive(format!("unknown parameter {name}")))?
            .dims()
            .to_vec();
        let t = Tensor::from_slice(values, shape.as_slice(), &self.device)?;
        self.set(name, &t)
    }

    pub fn values_f64(&self, name: &str) -> Result<Vec<f64>> {
        let t = self
            .tensor(name)
            .ok_or_else(|| Error::Archive(format!("unknown parameter {name}")))?;
        Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    /// Serialize parameters (optionally only those under `prefix`) to an archive.
    pub fn to_archive(&self, prefix: Option<&str>) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (k, e) in self.vars.borrow().iter() {
            if prefix.is_some_and(|p| !k.starts_with(p)) {
                continue;
            }
            let t = e.var.as_tensor();
            let data = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            a.insert(k.clone(), NamedTensor::new(t.dims().to_vec(), data)?);
        }
        Ok(a)
    }

    /// Loads every archive entry into the store, creating parameters that do not exist yet.
    pub fn load_archive(&self, archive: &TensorArchive) -> Result<()> {
        self.load_archive_renamed(archive, |k| Some(k.to_string()))
    }

    /// Like [`load_archive`](Self::load_archive) with a name mapping; `None` skips the entry.
    pub fn load_archive_renamed(
        &self,
        archive: &TensorArchive,
        rename: impl Fn(&str) -> Option<String>,
    ) -> Result<()> {
        for (k, nt) in &archive.tensors {
            let Some(name) = rename(k) else { continue };
            let t = Tensor::from_slice(&nt.data, nt.shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            if self.contains(&name) {
                self.set(&name, &t)?;
            } else {
                let var = Var::from_tensor(&t)?;
                self.vars
                    .borrow_mut()
                    .insert(name, Entry { var, trainable: true });
            }
        }
        Ok(())
    }
}

fn fill(rng: &mut ChaCha8Rng, n: usize, init: Init) -> Vec<f32> {
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Constant(c) => vec![c as f32; n],
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("std must be finite");
            (0..n).map(|_| d.sample(rng) as f32).collect()
        }
        Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..a) as f32).collect(),
        Init::XavierUniform { fan_in, fan_out } => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
        }
    }
}

/// Forward-pass context: training flag plus the RNG used by dropout.
pub struct Ctx {
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { train: false, rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)) }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub(crate) fn bernoulli_keep(&self, n: usize, keep: f64) -> Vec<f32> {
        let mut rng = self.rng.borrow_mut();
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Exact-erf GELU.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // 0.5 * (1 + tanh(x / 2)) is stable for large |x| and differentiable through primitives.
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// log(exp(a) + exp(b)) elementwise.
pub fn log_add_exp(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let m = a.maximum(b)?.detach();
    let s = (a.sub(&m)?.exp()? + b.sub(&m)?.exp()?)?;
    Ok((s.log()? + m)?)
}

/// Sinusoidal position table, `len × dim`.
pub fn sinusoid_table(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            v[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() } as f32;
        }
    }
    Ok(Tensor::from_vec(v, (len, dim), device)?.to_dtype(dtype)?)
}

/// Reads a scalar tensor back to the host as f64.
pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
