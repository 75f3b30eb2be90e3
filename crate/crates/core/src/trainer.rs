//! Online training loop, optimizers and anytime-inference metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{ModelGrads, ModelParams};
use crate::numerics::Matrix;
use crate::objective::{strategy_loss, GradientLedger, Strategy};
use crate::streams::{iter_batches, StreamSchedule};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        #[serde(default = "default_lr")]
        lr: f64,
    },
}

fn default_lr() -> f64 {
    5e-4
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr } => lr,
        }
    }

    fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the model, which is a useful control.
        if !(self.lr() >= 0.0) || !self.lr().is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate {} must be >= 0", self.lr())));
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidConfig("adam betas must be in [0,1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    param.check_same("adam_step grad", grad)?;
    param.check_same("adam_step state", &state.m)?;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let p = param.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, &g) in grad.as_slice().iter().enumerate() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    param.check_same("sgd_step", grad)?;
    for (p, g) in param.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Applies gradients to every trainable tensor. Adam moments are created
/// the first time a tensor receives a gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    adam: BTreeMap<&'static str, AdamState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            adam: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) -> Result<()> {
        let grads = grads.named();
        let tensors = params.named_trainable_mut();
        if grads.len() != tensors.len() {
            return Err(Error::ConfigMismatch("gradient/parameter layouts differ".into()));
        }
        for ((name, param), (gname, grad)) in tensors.into_iter().zip(grads) {
            debug_assert_eq!(name, gname);
            match self.config {
                OptimizerConfig::Sgd { lr } => sgd_step(param, grad, lr)?,
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let state = self
                        .adam
                        .entry(name)
                        .or_insert_with(|| AdamState::new(param.rows(), param.cols()));
                    adam_step(param, grad, state, lr, beta1, beta2, eps)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub optimizer: OptimizerConfig,
    pub iterations_per_batch: usize,
    pub batch_size: usize,
    /// Anytime-inference period in seen samples.
    pub eval_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sit,
            optimizer: OptimizerConfig::default(),
            iterations_per_batch: 3,
            batch_size: 16,
            eval_period: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.iterations_per_batch == 0 || self.batch_size == 0 || self.eval_period == 0 {
            return Err(Error::InvalidConfig(
                "iterations_per_batch, batch_size and eval_period must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Append-only set of observed classes in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeenClassRegistry {
    entries: Vec<(ClassId, usize)>,
}

impl SeenClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers unseen labels in the order they appear; returns how many
    /// were new.
    pub fn observe(&mut self, labels: impl IntoIterator<Item = ClassId>, step: usize) -> usize {
        let before = self.entries.len();
        for y in labels {
            if !self.contains(y) {
                self.entries.push((y, step));
            }
        }
        self.entries.len() - before
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.entries.iter().any(|(c, _)| *c == class)
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.entries.iter().map(|(c, _)| *c).collect()
    }

    pub fn first_seen(&self, class: ClassId) -> Option<usize> {
        self.entries.iter().find(|(c, _)| *c == class).map(|(_, s)| *s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rows are true classes, columns predictions, both in `classes` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = (0..self.classes.len()).map(|r| self.row_total(r)).sum();
        let correct: u64 = (0..self.classes.len()).map(|r| self.counts[r][r]).sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Top-1 accuracy over `class_ids`; ties go to the earliest class in
/// `class_ids`.
pub fn evaluate(
    model: &ModelParams,
    class_ids: &[ClassId],
    descriptors: &[&[f64]],
    test_samples: &[&Sample],
) -> Result<Evaluation> {
    if class_ids.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    if class_ids.len() != descriptors.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate descriptors",
            expected: (class_ids.len(), 1),
            got: (descriptors.len(), 1),
        });
    }
    let texts = descriptors
        .iter()
        .map(|d| model.encode_class(d))
        .collect::<Result<Vec<_>>>()?;
    let k = class_ids.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut correct = 0usize;
    for s in test_samples {
        let row = class_ids
            .iter()
            .position(|c| *c == s.y)
            .ok_or_else(|| Error::ConfigMismatch(format!("test sample of class {} not in class set", s.y)))?;
        let v = model.encode_image(&s.x)?;
        let pred = model.classify_encoded(&v, &texts)?;
        counts[row][pred] += 1;
        if pred == row {
            correct += 1;
        }
    }
    let accuracy = if test_samples.is_empty() {
        0.0
    } else {
        correct as f64 / test_samples.len() as f64
    };
    Ok(Evaluation {
        accuracy,
        confusion: ConfusionMatrix {
            classes: class_ids.to_vec(),
            counts,
        },
    })
}

/// Evaluates on the test split of `classes`, using the dataset's descriptors.
pub fn evaluate_classes(model: &ModelParams, dataset: &Dataset, classes: &[ClassId]) -> Result<Evaluation> {
    let descriptors = classes
        .iter()
        .map(|c| {
            dataset
                .descriptor(*c)
                .ok_or_else(|| Error::ConfigMismatch(format!("class {c} has no descriptor")))
        })
        .collect::<Result<Vec<_>>>()?;
    let tests: Vec<&Sample> = dataset.test_of(classes).collect();
    evaluate(model, classes, &descriptors, &tests)
}

/// Accuracy over the held-out classes only, discriminating among them.
pub fn zero_shot_eval(model: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.held_out.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    Ok(evaluate_classes(model, dataset, &dataset.held_out)?.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub samples_seen: usize,
    pub accuracy: f64,
}

/// Incremental mean; a constant sequence returns that constant exactly.
fn running_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut mean = 0.0;
    let mut n = 0usize;
    for v in values {
        n += 1;
        mean += (v - mean) / n as f64;
    }
    (n > 0).then_some(mean)
}

/// Area under the anytime-accuracy curve divided by the evaluated span,
/// `Σ f(i·δn)·δn / (k·δn)`. Points must sit at `δn, 2δn, …, kδn`.
pub fn a_auc(curve: &[CurvePoint], total_samples: usize) -> Result<f64> {
    let first = curve.first().ok_or(Error::EmptyCurve)?;
    let period = first.samples_seen;
    if period == 0 {
        return Err(Error::InvalidCurve("first point at 0 samples".into()));
    }
    for (i, p) in curve.iter().enumerate() {
        if p.samples_seen != (i + 1) * period {
            return Err(Error::InvalidCurve(format!(
                "point {i} at {} samples, expected {}",
                p.samples_seen,
                (i + 1) * period
            )));
        }
        if !(0.0..=1.0).contains(&p.accuracy) {
            return Err(Error::InvalidCurve(format!("accuracy {} outside [0, 1]", p.accuracy)));
        }
    }
    let last = curve.last().expect("non-empty").samples_seen;
    if last > total_samples {
        return Err(Error::InvalidCurve(format!(
            "curve reaches {last} samples but the stream has {total_samples}"
        )));
    }
    Ok(running_mean(curve.iter().map(|p| p.accuracy)).expect("non-empty"))
}

pub fn a_avg(task_accuracies: &[f64]) -> Result<f64> {
    running_mean(task_accuracies.iter().copied()).ok_or(Error::EmptyInput("task accuracies"))
}

pub fn a_last(task_accuracies: &[f64]) -> Result<f64> {
    task_accuracies.last().copied().ok_or(Error::EmptyInput("task accuracies"))
}

/// Fraction of test samples from classes homed before the final task that
/// are predicted as a class homed in the final task.
pub fn new_class_bias(confusion: &ConfusionMatrix, schedule: &StreamSchedule) -> f64 {
    let last = schedule.config.tasks.saturating_sub(1);
    let homes: Vec<usize> = confusion
        .classes
        .iter()
        .map(|&c| schedule.assignment(c).map_or(usize::MAX, |a| a.home_task))
        .collect();
    new_class_bias_by_home(&homes, &confusion.counts, last)
}

/// As [`new_class_bias`], from per-row home tasks and a square count matrix
/// whose columns follow the same class order as the rows.
pub fn new_class_bias_by_home(homes: &[usize], counts: &[Vec<u64>], last_task: usize) -> f64 {
    let mut total = 0u64;
    let mut to_new = 0u64;
    for (row, &home) in counts.iter().zip(homes) {
        if home < last_task {
            total += row.iter().sum::<u64>();
            to_new += row
                .iter()
                .zip(homes)
                .filter(|(_, &h)| h == last_task)
                .map(|(k, _)| *k)
                .sum::<u64>();
        }
    }
    if total == 0 {
        0.0
    } else {
        to_new as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: usize,
    pub samples_seen: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub curve: Vec<CurvePoint>,
    pub task_accuracies: Vec<TaskAccuracy>,
    pub a_auc: f64,
    pub a_avg: f64,
    pub a_last: f64,
    /// Over every streamed class, in first-occurrence order.
    pub confusion: ConfusionMatrix,
    pub new_class_bias: f64,
    pub zero_shot_before: Option<f64>,
    pub zero_shot_after: Option<f64>,
    pub ledger: GradientLedger,
    pub model: ModelParams,
    pub initial_loss: Option<f64>,
    /// Optimization passes per train sample (index into `Dataset::train`).
    pub visits: Vec<u32>,
    pub total_samples: usize,
}

pub fn train_online(
    dataset: &Dataset,
    schedule: &StreamSchedule,
    mut model: ModelParams,
    config: &TrainConfig,
) -> Result<RunArtifacts> {
    config.validate()?;
    let zero_shot_before = zero_shot_eval(&model, dataset).ok();
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut registry = SeenClassRegistry::new();
    let mut ledger = GradientLedger::new();
    let mut visits = vec![0u32; dataset.train.len()];
    let mut curve = Vec::new();
    let mut task_accuracies = Vec::new();
    let mut initial_loss = None;
    let task_ends = schedule.task_ends();
    let total = schedule.total_samples();
    let mut next_eval = config.eval_period;
    let mut next_task = 0usize;

    for batch in iter_batches(schedule, config.batch_size)? {
        let samples: Vec<&Sample> = batch.samples.iter().map(|&i| &dataset.train[i]).collect();
        let labels: Vec<ClassId> = samples.iter().map(|s| s.y).collect();
        registry.observe(labels.iter().copied(), batch.step);
        let seen = registry.classes();
        let descriptors = seen
            .iter()
            .map(|c| {
                dataset
                    .descriptor(*c)
                    .map(|d| (*c, d))
                    .ok_or_else(|| Error::ConfigMismatch(format!("batch class {c} has no descriptor")))
            })
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();

        for _ in 0..config.iterations_per_batch {
            let out = strategy_loss(config.strategy, &model, &images, &labels, &descriptors)?;
            initial_loss.get_or_insert(out.loss);
            ledger.record(&out, &seen, batch.step);
            optimizer.step(&mut model, &out.param_grads)?;
            for &i in &batch.samples {
                visits[i] += 1;
            }
        }

        let seen_now = batch.samples_seen;
        let crosses_eval = seen_now >= next_eval;
        let crosses_task = next_task < task_ends.len() && seen_now >= task_ends[next_task];
        if crosses_eval || crosses_task {
            let acc = evaluate_classes(&model, dataset, &seen)?.accuracy;
            while seen_now >= next_eval {
                curve.push(CurvePoint {
                    samples_seen: next_eval,
                    accuracy: acc,
                });
                next_eval += config.eval_period;
            }
            while next_task < task_ends.len() && seen_now >= task_ends[next_task] {
                task_accuracies.push(TaskAccuracy {
                    task: next_task,
                    samples_seen: seen_now,
                    accuracy: acc,
                });
                next_task += 1;
            }
        }
    }

    let seen = registry.classes();
    let final_eval = evaluate_classes(&model, dataset, &seen)?;
    let accs: Vec<f64> = task_accuracies.iter().map(|t| t.accuracy).collect();
    let zero_shot_after = zero_shot_eval(&model, dataset).ok();
    Ok(RunArtifacts {
        a_auc: a_auc(&curve, total)?,
        a_avg: a_avg(&accs)?,
        a_last: a_last(&accs)?,
        new_class_bias: new_class_bias(&final_eval.confusion, schedule),
        confusion: final_eval.confusion,
        curve,
        task_accuracies,
        zero_shot_before,
        zero_shot_after,
        ledger,
        model,
        initial_loss,
        visits,
        total_samples: total,
    })
}
