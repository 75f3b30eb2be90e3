//! Frozen linear dual encoder with optional parameter-efficient tuning.
//!
//! Each path maps its input through a frozen matrix with orthonormal rows,
//! optionally adds a trainable delta, and L2-normalizes:
//!
//! * low-rank: `h = W·x + s·B·(A·x)`, `s = alpha / rank`, `B` starts at zero
//! * adapter:  `h = W·x + U·tanh(D·W·x)`, `U` starts at zero
//!
//! so an untrained model reproduces the frozen encoder exactly. Class
//! prediction is a softmax over cosine similarities divided by the
//! temperature.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, l2_normalize, softmax, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetKind {
    LowRank,
    Adapter,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderPath {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_desc: usize,
    pub d_embed: usize,
    pub pet_kind: PetKind,
    pub pet_rank: usize,
    pub adapter_down_dim: usize,
    /// Low-rank delta is scaled by `lora_alpha / pet_rank`.
    pub lora_alpha: f64,
    /// Std of the Gaussian init of the non-zero PET factor, relative to
    /// `1/sqrt(fan_in)`.
    pub pet_init_gain: f64,
    pub tune_image: bool,
    pub tune_text: bool,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 32,
            d_desc: 32,
            d_embed: 16,
            pet_kind: PetKind::LowRank,
            pet_rank: 4,
            adapter_down_dim: 64,
            lora_alpha: 64.0,
            pet_init_gain: 1.0,
            tune_image: true,
            tune_text: true,
            temperature: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_in == 0 || self.d_desc == 0 || self.d_embed == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.d_embed > self.d_in || self.d_embed > self.d_desc {
            return bad(format!(
                "d_embed ({}) must not exceed d_in ({}) or d_desc ({})",
                self.d_embed, self.d_in, self.d_desc
            ));
        }
        if self.pet_kind == PetKind::LowRank
            && (self.pet_rank == 0 || self.pet_rank > self.d_embed.min(self.d_in))
        {
            return bad(format!(
                "pet_rank {} must be in 1..={}",
                self.pet_rank,
                self.d_embed.min(self.d_in)
            ));
        }
        if self.pet_kind == PetKind::Adapter && self.adapter_down_dim == 0 {
            return bad("adapter_down_dim must be positive".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !self.lora_alpha.is_finite() || !(self.pet_init_gain >= 0.0) {
            return bad("lora_alpha and pet_init_gain must be finite, gain >= 0".into());
        }
        Ok(())
    }

    fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.pet_rank as f64
    }

    fn path_dims(&self, path: EncoderPath) -> (usize, usize) {
        match path {
            EncoderPath::Image => (self.d_in, self.d_embed),
            EncoderPath::Text => (self.d_desc, self.d_embed),
        }
    }

    fn tunes(&self, path: EncoderPath) -> bool {
        self.pet_kind != PetKind::None
            && match path {
                EncoderPath::Image => self.tune_image,
                EncoderPath::Text => self.tune_text,
            }
    }
}

/// Trainable factors of one path. For low-rank, `down` is `A (r × in)` and
/// `up` is `B (embed × r)`; for the adapter, `down` is `D (a × embed)` and
/// `up` is `U (embed × a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pet {
    pub kind: PetKind,
    pub down: Matrix,
    pub up: Matrix,
}

/// Gradient with the same layout as [`Pet`].
#[derive(Debug, Clone, PartialEq)]
pub struct PetGrad {
    pub down: Matrix,
    pub up: Matrix,
}

impl PetGrad {
    fn zeros_like(pet: &Pet) -> Self {
        Self {
            down: Matrix::zeros(pet.down.rows(), pet.down.cols()),
            up: Matrix::zeros(pet.up.rows(), pet.up.cols()),
        }
    }

    fn add_scaled(&mut self, alpha: f64, other: &PetGrad) -> Result<()> {
        self.down.add_scaled(alpha, &other.down)?;
        self.up.add_scaled(alpha, &other.up)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub frozen: Matrix,
    pub pet: Option<Pet>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Vec<f64>,
    base: Vec<f64>,
    /// `A·x` (low-rank) or `tanh(D·W·x)` (adapter).
    hidden: Vec<f64>,
    pre_norm: f64,
    pub feature: Vec<f64>,
}

impl Encoder {
    fn new(config: &ModelConfig, path: EncoderPath, rng: &mut SeededRng) -> Result<Self> {
        let (d_in, d_out) = config.path_dims(path);
        let frozen = Matrix::orthonormal_rows(d_out, d_in, rng)?;
        let pet = if config.tunes(path) {
            let gain = config.pet_init_gain;
            Some(match config.pet_kind {
                PetKind::LowRank => {
                    let r = config.pet_rank;
                    Pet {
                        kind: PetKind::LowRank,
                        down: Matrix::gaussian(r, d_in, gain / (d_in as f64).sqrt(), rng),
                        up: Matrix::zeros(d_out, r),
                    }
                }
                PetKind::Adapter => {
                    let a = config.adapter_down_dim;
                    Pet {
                        kind: PetKind::Adapter,
                        down: Matrix::gaussian(a, d_out, gain / (d_out as f64).sqrt(), rng),
                        up: Matrix::zeros(d_out, a),
                    }
                }
                PetKind::None => unreachable!("tunes() excludes PetKind::None"),
            })
        } else {
            None
        };
        Ok(Self { frozen, pet })
    }

    pub fn forward(&self, x: &[f64], lora_scale: f64) -> Result<EncoderTrace> {
        let base = self.frozen.matvec(x)?;
        let (hidden, pre) = match &self.pet {
            None => (Vec::new(), base.clone()),
            Some(pet) => match pet.kind {
                PetKind::LowRank => {
                    let u = pet.down.matvec(x)?;
                    let delta = pet.up.matvec(&u)?;
                    let pre = base
                        .iter()
                        .zip(&delta)
                        .map(|(b, d)| b + lora_scale * d)
                        .collect();
                    (u, pre)
                }
                PetKind::Adapter => {
                    let a: Vec<f64> = pet.down.matvec(&base)?.iter().map(|v| v.tanh()).collect();
                    let delta = pet.up.matvec(&a)?;
                    let pre = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
                    (a, pre)
                }
                PetKind::None => (Vec::new(), base.clone()),
            },
        };
        let feature = l2_normalize(&pre)?;
        let pre_norm = dot(&pre, &pre).sqrt();
        Ok(EncoderTrace {
            input: x.to_vec(),
            base,
            hidden,
            pre_norm,
            feature,
        })
    }

    /// Accumulates `∂L/∂(pet factors)` given `∂L/∂feature`.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        grad_feature: &[f64],
        lora_scale: f64,
        acc: &mut PetGrad,
    ) -> Result<()> {
        let Some(pet) = &self.pet else {
            return Ok(());
        };
        // through the normalization: (I − v vᵀ) g / ‖h‖
        let v = &trace.feature;
        let along = dot(v, grad_feature);
        let grad_pre: Vec<f64> = grad_feature
            .iter()
            .zip(v)
            .map(|(g, vi)| (g - along * vi) / trace.pre_norm)
            .collect();
        match pet.kind {
            PetKind::LowRank => {
                acc.up.add_outer(lora_scale, &grad_pre, &trace.hidden)?;
                let back = pet.up.matvec_t(&grad_pre)?;
                acc.down.add_outer(lora_scale, &back, &trace.input)?;
            }
            PetKind::Adapter => {
                acc.up.add_outer(1.0, &grad_pre, &trace.hidden)?;
                let back = pet.up.matvec_t(&grad_pre)?;
                let grad_act: Vec<f64> = back
                    .iter()
                    .zip(&trace.hidden)
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect();
                acc.down.add_outer(1.0, &grad_act, &trace.base)?;
            }
            PetKind::None => {}
        }
        Ok(())
    }
}

/// Gradients for every trainable factor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub image: Option<PetGrad>,
    pub text: Option<PetGrad>,
}

impl ModelGrads {
    pub fn path_mut(&mut self, path: EncoderPath) -> Option<&mut PetGrad> {
        match path {
            EncoderPath::Image => self.image.as_mut(),
            EncoderPath::Text => self.text.as_mut(),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &ModelGrads) -> Result<()> {
        for (mine, theirs) in [(&mut self.image, &other.image), (&mut self.text, &other.text)] {
            match (mine, theirs) {
                (Some(a), Some(b)) => a.add_scaled(alpha, b)?,
                (None, None) => {}
                _ => return Err(Error::ConfigMismatch("gradient layouts differ".into())),
            }
        }
        Ok(())
    }

    /// Named gradient tensors in the same order as
    /// [`ModelParams::named_trainable_mut`].
    pub fn named(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = Vec::new();
        if let Some(g) = &self.image {
            out.push(("image.down", &g.down));
            out.push(("image.up", &g.up));
        }
        if let Some(g) = &self.text {
            out.push(("text.down", &g.down));
            out.push(("text.up", &g.up));
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named()
            .into_iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub image: Encoder,
    pub text: Encoder,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut image_rng = SeededRng::with_stream(seed, streams::IMAGE_ENCODER);
        let mut text_rng = SeededRng::with_stream(seed, streams::TEXT_ENCODER);
        Ok(Self {
            config: config.clone(),
            image: Encoder::new(config, EncoderPath::Image, &mut image_rng)?,
            text: Encoder::new(config, EncoderPath::Text, &mut text_rng)?,
        })
    }

    pub fn encoder(&self, path: EncoderPath) -> &Encoder {
        match path {
            EncoderPath::Image => &self.image,
            EncoderPath::Text => &self.text,
        }
    }

    pub fn lora_scale(&self) -> f64 {
        self.config.lora_scale()
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn trace(&self, path: EncoderPath, input: &[f64]) -> Result<EncoderTrace> {
        self.encoder(path).forward(input, self.lora_scale())
    }

    pub fn encode_image(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(EncoderPath::Image, x)?.feature)
    }

    pub fn encode_class(&self, descriptor: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(EncoderPath::Text, descriptor)?.feature)
    }

    /// The same model with every PET delta removed.
    pub fn frozen_only(&self) -> Self {
        let mut m = self.clone();
        m.image.pet = None;
        m.text.pet = None;
        m
    }

    pub fn trainable_count(&self) -> usize {
        [&self.image.pet, &self.text.pet]
            .into_iter()
            .flatten()
            .map(|p| p.down.len() + p.up.len())
            .sum()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            image: self.image.pet.as_ref().map(PetGrad::zeros_like),
            text: self.text.pet.as_ref().map(PetGrad::zeros_like),
        }
    }

    pub fn named_trainable_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.image.pet {
            out.push(("image.down", &mut p.down));
            out.push(("image.up", &mut p.up));
        }
        if let Some(p) = &mut self.text.pet {
            out.push(("text.down", &mut p.down));
            out.push(("text.up", &mut p.up));
        }
        out
    }

    pub fn flatten_trainable(&mut self) -> Vec<f64> {
        self.named_trainable_mut()
            .into_iter()
            .flat_map(|(_, m)| m.as_slice().to_vec())
            .collect()
    }

    /// Overwrites the trainable factors from a flat vector laid out as
    /// [`Self::flatten_trainable`].
    pub fn set_trainable(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.trainable_count();
        if flat.len() != total {
            return Err(Error::ShapeMismatch {
                op: "ModelParams::set_trainable",
                expected: (total, 1),
                got: (flat.len(), 1),
            });
        }
        let mut offset = 0;
        for (_, m) in self.named_trainable_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Class probabilities `softmax(cos(v, t_k) / τ)` over the given
    /// descriptors, in input order.
    pub fn predict(&self, x: &[f64], descriptors: &[&[f64]]) -> Result<Vec<f64>> {
        if descriptors.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        let v = self.encode_image(x)?;
        let texts = descriptors
            .iter()
            .map(|d| self.encode_class(d))
            .collect::<Result<Vec<_>>>()?;
        self.predict_encoded(&v, &texts)
    }

    /// As [`Self::predict`] with both sides already encoded.
    pub fn predict_encoded(&self, image_feature: &[f64], text_features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if text_features.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        let tau = self.temperature();
        let logits: Vec<f64> = text_features
            .iter()
            .map(|t| dot(image_feature, t) / tau)
            .collect();
        softmax(&logits)
    }

    /// Index of the predicted descriptor (lowest index on ties).
    pub fn classify_encoded(&self, image_feature: &[f64], text_features: &[Vec<f64>]) -> Result<usize> {
        if text_features.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        let sims: Vec<f64> = text_features.iter().map(|t| dot(image_feature, t)).collect();
        Ok(argmax(&sims).expect("non-empty"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = serde_json::from_str(&text)?;
        params.config.validate()?;
        Ok(params)
    }
}

/// Fixed stream ids so every consumer of a run seed draws independently.
pub mod streams {
    pub const IMAGE_ENCODER: u64 = 1;
    pub const TEXT_ENCODER: u64 = 2;
    pub const DATASET: u64 = 3;
    pub const DESCRIPTORS: u64 = 4;
    pub const SCHEDULE: u64 = 5;
}
