use candle_core::{DType, Tensor};

use super::aligner::Aligner;
use super::config::{AcousticConfig, DurationSource};
use super::fft::FftStack;
use super::fusion::{ContextInputs, Fusion, FusionInit};
use super::phonemes::PhonemeSequence;
use super::text::{SpeakerTable, TextEncoder};
use super::variance::{
    duration_targets, durations_from_log, length_regulate, mse, VarianceAdaptor, VariancePredictor, VarianceStats,
};
use crate::audiofeat::{MelSpectrogram, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{scalar_f64, Ctx, Linear, ParamStore};

/// FFT blocks over frames and a linear map to 80 mel channels.
#[derive(Clone, Debug)]
pub struct MelDecoder {
    stack: FftStack,
    out: Linear,
}

impl MelDecoder {
    pub fn new(store: &ParamStore, name: &str, cfg: &AcousticConfig) -> Result<Self> {
        Ok(Self {
            stack: FftStack::new(store, &format!("{name}.fft"), cfg.decoder_layers, cfg)?,
            out: Linear::new(store, &format!("{name}.out"), cfg.d_model, N_MELS)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        if x.dim(0)? == 0 {
            return Err(Error::Validation("decoder input has no frames".into()));
        }
        self.out.forward(&self.stack.forward(x, ctx)?)
    }
}

/// Mean absolute error against a `frames × 80` target.
pub fn mel_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("mel {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Everything the acoustic model consumes for one utterance.
#[derive(Debug, Clone)]
pub struct AcousticInputs<'a> {
    pub phonemes: &'a PhonemeSequence,
    pub speaker: usize,
    /// `None` runs the context-free baseline path.
    pub context: Option<ContextInputs>,
}

/// Training targets for one utterance.
#[derive(Debug, Clone)]
pub struct AcousticTargets {
    pub mel: MelSpectrogram,
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
    pub durations: Option<Vec<u32>>,
}

impl AcousticTargets {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        let f = self.mel.n_frames;
        if self.pitch.len() != f || self.energy.len() != f {
            return Err(Error::Shape(format!(
                "{f} mel frames but {} pitch / {} energy values",
                self.pitch.len(),
                self.energy.len()
            )));
        }
        if self.pitch.iter().chain(&self.energy).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite variance target".into()));
        }
        if let Some(d) = &self.durations {
            let s: u64 = d.iter().map(|&x| x as u64).sum();
            if s != f as u64 {
                return Err(Error::Validation(format!("durations sum to {s}, mel has {f} frames")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AcousticLosses {
    pub total: Tensor,
    pub mel: Tensor,
    pub duration: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    /// Absent when ground-truth durations bypass the aligner.
    pub align: Option<Tensor>,
    pub durations: Vec<u32>,
    pub mel_pred: Tensor,
}

impl AcousticLosses {
    /// (total, mel, duration, pitch, energy, align) as host scalars.
    pub fn values(&self) -> Result<[f64; 6]> {
        Ok([
            scalar_f64(&self.total)?,
            scalar_f64(&self.mel)?,
            scalar_f64(&self.duration)?,
            scalar_f64(&self.pitch)?,
            scalar_f64(&self.energy)?,
            self.align.as_ref().map_or(Ok(0.0), scalar_f64)?,
        ])
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub durations: Vec<u32>,
}

/// Text encoder, speaker table, fusion, aligner, variance adaptor and mel decoder.
#[derive(Clone, Debug)]
pub struct AcousticModel {
    pub config: AcousticConfig,
    text: TextEncoder,
    speakers: SpeakerTable,
    fusion: Fusion,
    aligner: Aligner,
    duration: VariancePredictor,
    variance: VarianceAdaptor,
    decoder: MelDecoder,
}

impl AcousticModel {
    pub fn new(store: &ParamStore, config: AcousticConfig) -> Result<Self> {
        Self::with_fusion_init(store, config, FusionInit::Xavier)
    }

    pub fn with_fusion_init(store: &ParamStore, config: AcousticConfig, init: FusionInit) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            text: TextEncoder::new(store, "text", &config)?,
            speakers: SpeakerTable::new(store, "spk", &config)?,
            fusion: Fusion::new(store, "fuse", &config, init)?,
            aligner: Aligner::new(store, "align", &config)?,
            duration: VariancePredictor::new(store, "var.duration", &config)?,
            variance: VarianceAdaptor::new(store, "var", &config)?,
            decoder: MelDecoder::new(store, "dec", &config)?,
            config,
        })
    }

    pub fn aligner(&self) -> &Aligner {
        &self.aligner
    }

    /// Phoneme-level decoder input (`P × d`).
    pub fn fused(&self, inputs: &AcousticInputs, ctx: &Ctx) -> Result<Tensor> {
        let h_p = self.text.forward(inputs.phonemes, ctx)?;
        let h_s = self.speakers.forward(inputs.speaker)?;
        match &inputs.context {
            Some(c) => self.fusion.forward(&h_p, &h_s, c, &inputs.phonemes.word_map),
            None => self.fusion.forward_baseline(&h_p, &h_s),
        }
    }

    pub fn forward_train(
        &self,
        inputs: &AcousticInputs,
        targets: &AcousticTargets,
        stats: &VarianceStats,
        ctx: &Ctx,
    ) -> Result<AcousticLosses> {
        targets.validate()?;
        let dev = self.text_device();
        let mel_t = Tensor::from_slice(&targets.mel.data, (targets.mel.n_frames, N_MELS), &dev)?
            .to_dtype(self.dtype())?;
        let (durations, align) = match self.config.duration_source {
            DurationSource::GroundTruth => {
                let d = targets.durations.clone().ok_or_else(|| {
                    Error::Validation("ground-truth duration mode needs durations on every sample".into())
                })?;
                if d.len() != inputs.phonemes.len() {
                    return Err(Error::Shape(format!(
                        "{} durations for {} phonemes",
                        d.len(),
                        inputs.phonemes.len()
                    )));
                }
                (d, None)
            }
            DurationSource::Aligner => {
                let a = self.aligner.align(inputs.phonemes, &mel_t)?;
                (a.durations, Some(a.loss))
            }
        };
        let fused = self.fused(inputs, ctx)?;
        let log_dur = self.duration.forward(&fused, ctx)?;
        let dur_loss = mse(&log_dur, &duration_targets(&durations))?;
        let frames = length_regulate(&fused, &durations)?;
        let var = self.variance.forward(&frames, Some((&targets.pitch, &targets.energy)), stats, ctx)?;
        let (pitch_loss, energy_loss) = var.losses.expect("targets were supplied");
        let mel_pred = self.decoder.forward(&var.adapted, ctx)?;
        let mel_loss = mel_l1(&mel_pred, &mel_t)?;
        let w = self.config.loss_weights;
        let mut total = ((((&mel_loss * w.mel)? + (&dur_loss * w.duration)?)? + (&pitch_loss * w.pitch)?)?
            + (&energy_loss * w.energy)?)?;
        if let Some(a) = &align {
            total = (total + (a * w.align)?)?;
        }
        Ok(AcousticLosses {
            total,
            mel: mel_loss,
            duration: dur_loss,
            pitch: pitch_loss,
            energy: energy_loss,
            align,
            durations,
            mel_pred,
        })
    }

    /// Inference with predicted durations, or `durations` when given.
    pub fn synthesize(
        &self,
        inputs: &AcousticInputs,
        stats: &VarianceStats,
        durations: Option<&[u32]>,
        ctx: &Ctx,
    ) -> Result<Synthesis> {
        let fused = self.fused(inputs, ctx)?;
        let durations = match durations {
            Some(d) => d.to_vec(),
            None => {
                let p: Vec<f32> = self.duration.forward(&fused, ctx)?.to_dtype(DType::F32)?.to_vec1()?;
                durations_from_log(&p)
            }
        };
        let frames = length_regulate(&fused, &durations)?;
        let var = self.variance.forward(&frames, None, stats, ctx)?;
        let mel = self.decoder.forward(&var.adapted, ctx)?;
        let n = mel.dim(0)?;
        let data = mel.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        Ok(Synthesis { mel: MelSpectrogram::new(n, data)?, durations })
    }

    fn dtype(&self) -> DType {
        self.decoder.out.weight.dtype()
    }

    fn text_device(&self) -> candle_core::Device {
        self.decoder.out.weight.device().clone()
    }
}
