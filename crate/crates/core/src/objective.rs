//! Image-text InfoNCE with analytic gradients, and the per-class gradient
//! ledger.
//!
//! For a batch of images with labels and a set of candidate classes `C`,
//!
//! ```text
//! L = −(1/n) Σᵢ log( exp(cos(vᵢ, t⁺)/τ) / Σ_{c ∈ C} exp(cos(vᵢ, t_c)/τ) )
//! ```
//!
//! The symmetric variant uses only the classes present in the batch as `C`;
//! the asymmetric variant uses every class seen so far.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderPath, ModelGrads, ModelParams};
use crate::numerics::{axpy, dot, log_sum_exp, norm, softmax, Matrix};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Negatives from classes in the current batch.
    Sit,
    /// Negatives from every seen class.
    Ait,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sit => "sit",
            Strategy::Ait => "ait",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sit" => Ok(Strategy::Sit),
            "ait" => Ok(Strategy::Ait),
            other => Err(format!("unknown strategy {other:?} (expected sit or ait)")),
        }
    }
}

/// `∂L/∂t_c` for one candidate class, split by the role the class played.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureGrad {
    pub class: ClassId,
    pub in_batch: bool,
    /// Sum over samples whose label is this class.
    pub positive: Vec<f64>,
    /// Sum over samples of other classes.
    pub negative: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over the batch.
    pub loss: f64,
    /// Candidate classes, in logit column order.
    pub classes: Vec<ClassId>,
    /// Per-sample logits `cos/τ`, `n × K`.
    pub logits: Matrix,
    /// `∂L/∂z`, `n × K`.
    pub logit_grads: Matrix,
    /// `∂L/∂vᵢ`, `n × d_embed`.
    pub image_feature_grads: Matrix,
    pub text_feature_grads: Vec<ClassFeatureGrad>,
    pub param_grads: ModelGrads,
}

pub fn sit_loss(
    params: &ModelParams,
    images: &[&[f64]],
    labels: &[ClassId],
    descriptors: &[(ClassId, &[f64])],
) -> Result<LossOutput> {
    check_inputs(images, labels, descriptors)?;
    let candidates: Vec<(ClassId, &[f64])> = descriptors
        .iter()
        .filter(|(c, _)| labels.contains(c))
        .copied()
        .collect();
    info_nce(params, images, labels, &candidates)
}

pub fn ait_loss(
    params: &ModelParams,
    images: &[&[f64]],
    labels: &[ClassId],
    seen_descriptors: &[(ClassId, &[f64])],
) -> Result<LossOutput> {
    check_inputs(images, labels, seen_descriptors)?;
    info_nce(params, images, labels, seen_descriptors)
}

pub fn strategy_loss(
    strategy: Strategy,
    params: &ModelParams,
    images: &[&[f64]],
    labels: &[ClassId],
    descriptors: &[(ClassId, &[f64])],
) -> Result<LossOutput> {
    match strategy {
        Strategy::Sit => sit_loss(params, images, labels, descriptors),
        Strategy::Ait => ait_loss(params, images, labels, descriptors),
    }
}

fn check_inputs(images: &[&[f64]], labels: &[ClassId], descriptors: &[(ClassId, &[f64])]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "loss labels",
            expected: (images.len(), 1),
            got: (labels.len(), 1),
        });
    }
    for (i, (c, _)) in descriptors.iter().enumerate() {
        if descriptors[..i].iter().any(|(d, _)| d == c) {
            return Err(Error::ConfigMismatch(format!("duplicate descriptor for class {c}")));
        }
    }
    if let Some(missing) = labels
        .iter()
        .find(|y| !descriptors.iter().any(|(c, _)| c == *y))
    {
        return Err(Error::MissingPositive(*missing));
    }
    Ok(())
}

fn info_nce(
    params: &ModelParams,
    images: &[&[f64]],
    labels: &[ClassId],
    candidates: &[(ClassId, &[f64])],
) -> Result<LossOutput> {
    let n = images.len();
    let k = candidates.len();
    let tau = params.temperature();
    let scale = params.lora_scale();

    let image_traces = images
        .iter()
        .map(|x| params.trace(EncoderPath::Image, x))
        .collect::<Result<Vec<_>>>()?;
    let text_traces = candidates
        .iter()
        .map(|(_, d)| params.trace(EncoderPath::Text, d))
        .collect::<Result<Vec<_>>>()?;
    let d = params.config.d_embed;
    let positives: Vec<usize> = labels
        .iter()
        .map(|y| candidates.iter().position(|(c, _)| c == y).expect("checked"))
        .collect();

    let mut logits = Matrix::zeros(n, k);
    let mut logit_grads = Matrix::zeros(n, k);
    let mut image_feature_grads = Matrix::zeros(n, d);
    let mut pos_grads = vec![vec![0.0; d]; k];
    let mut neg_grads = vec![vec![0.0; d]; k];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;

    for (i, trace) in image_traces.iter().enumerate() {
        let v = &trace.feature;
        let z: Vec<f64> = text_traces.iter().map(|t| dot(v, &t.feature) / tau).collect();
        let p = softmax(&z)?;
        let pos = positives[i];
        total += log_sum_exp(&z)? - z[pos];
        logits.row_mut(i).copy_from_slice(&z);

        for j in 0..k {
            let g = (p[j] - if j == pos { 1.0 } else { 0.0 }) * inv_n;
            logit_grads.set(i, j, g);
            axpy(g / tau, &text_traces[j].feature, image_feature_grads.row_mut(i));
            let bucket = if j == pos { &mut pos_grads[j] } else { &mut neg_grads[j] };
            axpy(g / tau, v, bucket);
        }
    }

    let mut param_grads = params.zero_grads();
    if let Some(acc) = param_grads.path_mut(EncoderPath::Image) {
        for (i, trace) in image_traces.iter().enumerate() {
            params
                .image
                .backward(trace, image_feature_grads.row(i), scale, acc)?;
        }
    }
    let text_feature_grads: Vec<ClassFeatureGrad> = candidates
        .iter()
        .zip(pos_grads.into_iter().zip(neg_grads))
        .map(|(&(class, _), (positive, negative))| ClassFeatureGrad {
            class,
            in_batch: labels.contains(&class),
            positive,
            negative,
        })
        .collect();
    if let Some(acc) = param_grads.path_mut(EncoderPath::Text) {
        for (trace, g) in text_traces.iter().zip(&text_feature_grads) {
            let full: Vec<f64> = g.positive.iter().zip(&g.negative).map(|(a, b)| a + b).collect();
            params.text.backward(trace, &full, scale, acc)?;
        }
    }

    let loss = total * inv_n;
    if !loss.is_finite() || !param_grads.is_finite() {
        return Err(Error::NonFinite("info_nce"));
    }
    Ok(LossOutput {
        loss,
        classes: candidates.iter().map(|(c, _)| *c).collect(),
        logits,
        logit_grads,
        image_feature_grads,
        text_feature_grads,
        param_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Positive,
    Symmetric,
    Asymmetric,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::Positive => "positive",
            Bucket::Symmetric => "symmetric",
            Bucket::Asymmetric => "asymmetric",
        }
    }
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Bucket::Positive),
            "symmetric" => Ok(Bucket::Symmetric),
            "asymmetric" => Ok(Bucket::Asymmetric),
            other => Err(format!("unknown bucket {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: usize,
    pub class: ClassId,
    pub positive: f64,
    pub symmetric: f64,
    pub asymmetric: f64,
}

/// Per-class cumulative bucket totals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketTotals {
    pub positive: f64,
    pub symmetric: f64,
    pub asymmetric: f64,
}

impl BucketTotals {
    pub fn negative(&self) -> f64 {
        self.symmetric + self.asymmetric
    }
}

/// Norms of `∂L/∂t_c` per step and class, measured at the normalized text
/// feature. Within a step, repeated recordings (several optimizer
/// iterations on one batch) accumulate into the same entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientLedger {
    pub entries: Vec<LedgerEntry>,
    /// Classes in first-occurrence order.
    pub order: Vec<ClassId>,
}

impl GradientLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, output: &LossOutput, seen_classes: &[ClassId], step: usize) {
        for &c in seen_classes {
            if !self.order.contains(&c) {
                self.order.push(c);
            }
        }
        for g in &output.text_feature_grads {
            if !self.order.contains(&g.class) {
                self.order.push(g.class);
            }
            let pos = norm(&g.positive);
            let neg = norm(&g.negative);
            let (sym, asym) = if g.in_batch { (neg, 0.0) } else { (0.0, neg) };
            match self
                .entries
                .iter_mut()
                .rev()
                .take_while(|e| e.step == step)
                .find(|e| e.class == g.class)
            {
                Some(e) => {
                    e.positive += pos;
                    e.symmetric += sym;
                    e.asymmetric += asym;
                }
                None => self.entries.push(LedgerEntry {
                    step,
                    class: g.class,
                    positive: pos,
                    symmetric: sym,
                    asymmetric: asym,
                }),
            }
        }
    }

    /// Whole-run totals per class, in occurrence order.
    pub fn totals(&self) -> Vec<(ClassId, BucketTotals)> {
        self.order
            .iter()
            .map(|&c| {
                let mut t = BucketTotals::default();
                for e in self.entries.iter().filter(|e| e.class == c) {
                    t.positive += e.positive;
                    t.symmetric += e.symmetric;
                    t.asymmetric += e.asymmetric;
                }
                (c, t)
            })
            .collect()
    }

    /// Running totals per class after each recorded step:
    /// `(step, class, cumulative)`.
    pub fn cumulative(&self) -> Vec<(usize, ClassId, BucketTotals)> {
        let mut running: Vec<(ClassId, BucketTotals)> = Vec::new();
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let slot = match running.iter().position(|(c, _)| *c == e.class) {
                Some(i) => i,
                None => {
                    running.push((e.class, BucketTotals::default()));
                    running.len() - 1
                }
            };
            let t = &mut running[slot].1;
            t.positive += e.positive;
            t.symmetric += e.symmetric;
            t.asymmetric += e.asymmetric;
            out.push((e.step, e.class, *t));
        }
        out
    }

    pub fn asymmetric_total(&self) -> f64 {
        self.entries.iter().map(|e| e.asymmetric).sum()
    }

    /// `step,class_id,bucket,norm`, three rows per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,class_id,bucket,norm\n");
        for e in &self.entries {
            for (b, v) in [
                (Bucket::Positive, e.positive),
                (Bucket::Symmetric, e.symmetric),
                (Bucket::Asymmetric, e.asymmetric),
            ] {
                out.push_str(&format!("{},{},{},{}\n", e.step, e.class, b.name(), v));
            }
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Inverse of [`Self::to_csv`]. Occurrence order is taken from the
    /// order in which classes first appear.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut ledger = GradientLedger::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim() == "step,class_id,bucket,norm" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing ledger header".into(),
                })
            }
        }
        for (line, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line, msg };
            let f: Vec<&str> = raw.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", f.len())));
            }
            let step: usize = f[0].parse().map_err(|_| bad(format!("bad step {:?}", f[0])))?;
            let class = ClassId(f[1].parse().map_err(|_| bad(format!("bad class {:?}", f[1])))?);
            let bucket: Bucket = f[2].parse().map_err(bad)?;
            let value: f64 = f[3].parse().map_err(|_| bad(format!("bad norm {:?}", f[3])))?;
            if !ledger.order.contains(&class) {
                ledger.order.push(class);
            }
            let idx = match ledger
                .entries
                .iter()
                .rposition(|e| e.step == step && e.class == class)
            {
                Some(i) => i,
                None => {
                    ledger.entries.push(LedgerEntry {
                        step,
                        class,
                        positive: 0.0,
                        symmetric: 0.0,
                        asymmetric: 0.0,
                    });
                    ledger.entries.len() - 1
                }
            };
            let e = &mut ledger.entries[idx];
            match bucket {
                Bucket::Positive => e.positive = value,
                Bucket::Symmetric => e.symmetric = value,
                Bucket::Asymmetric => e.asymmetric = value,
            }
        }
        Ok(ledger)
    }
}
