//! Task schedules and the single-pass batch stream.
//!
//! A schedule assigns every trainable sample to exactly one task. Classes
//! are tagged disjoint (all samples in their home task) or blurry (a fixed
//! percentage of samples leaks uniformly into the other tasks). The batch
//! iterator walks the concatenated tasks and never reveals where one task
//! ends; [`StreamSchedule::task_ends`] is for the evaluation harness only.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::streams as rng_streams;
use crate::numerics::SeededRng;
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Cil,
    IBlurry,
    SiBlurry,
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cil" => Ok(Regime::Cil),
            "i-blurry" | "iblurry" => Ok(Regime::IBlurry),
            "si-blurry" | "siblurry" => Ok(Regime::SiBlurry),
            other => Err(format!("unknown regime {other:?} (expected cil, i-blurry or si-blurry)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRole {
    Disjoint,
    Blurry,
}

impl fmt::Display for ClassRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassRole::Disjoint => "d",
            ClassRole::Blurry => "b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAssignment {
    pub class: ClassId,
    pub role: ClassRole,
    pub home_task: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub regime: Regime,
    pub tasks: usize,
    pub disjoint_fraction: f64,
    /// Percentage of each blurry class's samples placed outside its home task.
    pub blurry_level: u32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            regime: Regime::SiBlurry,
            tasks: 5,
            disjoint_fraction: 0.5,
            blurry_level: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSchedule {
    pub config: StreamConfig,
    pub seed: u64,
    /// Per task, indices into `Dataset::train` in stream order.
    pub tasks: Vec<Vec<usize>>,
    /// One entry per streamed class, ascending by id.
    pub classes: Vec<ClassAssignment>,
}

impl StreamSchedule {
    pub fn assignment(&self, class: ClassId) -> Option<&ClassAssignment> {
        self.classes.iter().find(|a| a.class == class)
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(Vec::len).sum()
    }

    /// Cumulative sample count at the end of each task.
    pub fn task_ends(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .scan(0, |acc, t| {
                *acc += t.len();
                Some(*acc)
            })
            .collect()
    }

    /// All scheduled sample indices in stream order.
    pub fn stream_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.tasks.iter().flatten().copied()
    }

    /// Writes `step,sample_id,class_id,role,home_task`, one row per streamed
    /// sample; `step` is the position in the stream.
    pub fn export_csv(&self, dataset: &Dataset, path: &Path) -> Result<()> {
        let mut out = String::from("step,sample_id,class_id,role,home_task\n");
        for (step, idx) in self.stream_order().enumerate() {
            let class = dataset.train[idx].y;
            let a = self
                .assignment(class)
                .ok_or_else(|| Error::ConfigMismatch(format!("class {class} not in schedule")))?;
            out.push_str(&format!("{step},{idx},{class},{},{}\n", a.role, a.home_task));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn build_schedule(dataset: &Dataset, config: &StreamConfig, seed: u64) -> Result<StreamSchedule> {
    match config.regime {
        Regime::Cil => make_cil_schedule(dataset, config.tasks, seed),
        Regime::IBlurry => {
            make_i_blurry_schedule(dataset, config.tasks, config.disjoint_fraction, config.blurry_level, seed)
        }
        Regime::SiBlurry => {
            make_si_blurry_schedule(dataset, config.tasks, config.disjoint_fraction, config.blurry_level, seed)
        }
    }
}

/// Sizes of `n` items split into `parts` near-equal groups, remainder first.
fn near_equal(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| n / parts + usize::from(i < n % parts)).collect()
}

/// Samples a class keeps in its home task: `⌈(1 − M/100) · n⌉`.
pub fn home_share(n: usize, blurry_level: u32) -> usize {
    ((100 - blurry_level as usize) * n).div_ceil(100)
}

pub fn make_cil_schedule(dataset: &Dataset, tasks: usize, seed: u64) -> Result<StreamSchedule> {
    let mut classes = dataset.trainable_classes();
    if tasks == 0 || tasks > classes.len() {
        return Err(Error::InvalidConfig(format!(
            "CIL needs 1 <= tasks <= {} classes, got {tasks}",
            classes.len()
        )));
    }
    let mut rng = SeededRng::with_stream(seed, rng_streams::SCHEDULE);
    rng.shuffle(&mut classes);
    let mut assignments = Vec::with_capacity(classes.len());
    let mut it = classes.into_iter();
    for (task, size) in near_equal(it.len(), tasks).into_iter().enumerate() {
        for class in it.by_ref().take(size) {
            assignments.push(ClassAssignment {
                class,
                role: ClassRole::Disjoint,
                home_task: task,
            });
        }
    }
    let config = StreamConfig {
        regime: Regime::Cil,
        tasks,
        disjoint_fraction: 1.0,
        blurry_level: 0,
    };
    Ok(distribute(dataset, config, seed, assignments, &mut rng))
}

fn check_blurry_params(
    dataset: &Dataset,
    tasks: usize,
    disjoint_fraction: f64,
    blurry_level: u32,
) -> Result<usize> {
    if tasks < 2 {
        return Err(Error::InvalidConfig(format!("blurry regimes need >= 2 tasks, got {tasks}")));
    }
    if !(0.0..=1.0).contains(&disjoint_fraction) {
        return Err(Error::InvalidConfig(format!(
            "disjoint_fraction {disjoint_fraction} outside [0, 1]"
        )));
    }
    if blurry_level >= 100 {
        return Err(Error::InvalidConfig(format!("blurry level {blurry_level} must be < 100")));
    }
    let n = dataset.trainable_classes().len();
    if n == 0 {
        return Err(Error::InvalidConfig("dataset has no trainable classes".into()));
    }
    Ok((disjoint_fraction * n as f64).round() as usize)
}

/// Random disjoint/blurry split, then a random home task per class; draws
/// that leave a task without classes are rejected while classes >= tasks.
pub fn make_si_blurry_schedule(
    dataset: &Dataset,
    tasks: usize,
    disjoint_fraction: f64,
    blurry_level: u32,
    seed: u64,
) -> Result<StreamSchedule> {
    let disjoint_count = check_blurry_params(dataset, tasks, disjoint_fraction, blurry_level)?;
    let mut rng = SeededRng::with_stream(seed, rng_streams::SCHEDULE);
    let mut classes = dataset.trainable_classes();
    rng.shuffle(&mut classes);
    let homes = loop {
        let homes: Vec<usize> = classes.iter().map(|_| rng.below(tasks)).collect();
        let mut used = vec![false; tasks];
        homes.iter().for_each(|&h| used[h] = true);
        if classes.len() < tasks || used.iter().all(|&u| u) {
            break homes;
        }
    };
    let assignments = classes
        .iter()
        .zip(homes)
        .enumerate()
        .map(|(i, (&class, home_task))| ClassAssignment {
            class,
            role: if i < disjoint_count {
                ClassRole::Disjoint
            } else {
                ClassRole::Blurry
            },
            home_task,
        })
        .collect();
    let config = StreamConfig {
        regime: Regime::SiBlurry,
        tasks,
        disjoint_fraction,
        blurry_level,
    };
    Ok(distribute(dataset, config, seed, assignments, &mut rng))
}

/// Each task is home to `⌊d/T⌋` disjoint and `⌊b/T⌋` blurry classes, with
/// remainders going to the earliest tasks.
pub fn make_i_blurry_schedule(
    dataset: &Dataset,
    tasks: usize,
    disjoint_fraction: f64,
    blurry_level: u32,
    seed: u64,
) -> Result<StreamSchedule> {
    let disjoint_count = check_blurry_params(dataset, tasks, disjoint_fraction, blurry_level)?;
    let mut rng = SeededRng::with_stream(seed, rng_streams::SCHEDULE);
    let mut classes = dataset.trainable_classes();
    rng.shuffle(&mut classes);
    let (disjoint, blurry) = classes.split_at(disjoint_count);
    let mut assignments = Vec::with_capacity(classes.len());
    for (group, role) in [(disjoint, ClassRole::Disjoint), (blurry, ClassRole::Blurry)] {
        let mut it = group.iter();
        for (task, size) in near_equal(group.len(), tasks).into_iter().enumerate() {
            for &class in it.by_ref().take(size) {
                assignments.push(ClassAssignment {
                    class,
                    role,
                    home_task: task,
                });
            }
        }
    }
    let config = StreamConfig {
        regime: Regime::IBlurry,
        tasks,
        disjoint_fraction,
        blurry_level,
    };
    Ok(distribute(dataset, config, seed, assignments, &mut rng))
}

/// Places samples according to the class assignments and shuffles each task.
fn distribute(
    dataset: &Dataset,
    config: StreamConfig,
    seed: u64,
    mut assignments: Vec<ClassAssignment>,
    rng: &mut SeededRng,
) -> StreamSchedule {
    assignments.sort_by_key(|a| a.class);
    let t = config.tasks;
    let mut tasks: Vec<Vec<usize>> = vec![Vec::new(); t];
    for a in &assignments {
        let mut idx = dataset.train_indices(a.class);
        match a.role {
            ClassRole::Disjoint => tasks[a.home_task].extend(idx),
            ClassRole::Blurry => {
                rng.shuffle(&mut idx);
                let keep = home_share(idx.len(), config.blurry_level);
                tasks[a.home_task].extend_from_slice(&idx[..keep]);
                for &sample in &idx[keep..] {
                    let mut dest = rng.below(t - 1);
                    if dest >= a.home_task {
                        dest += 1;
                    }
                    tasks[dest].push(sample);
                }
            }
        }
    }
    for task in &mut tasks {
        rng.shuffle(task);
    }
    StreamSchedule {
        config,
        seed,
        tasks,
        classes: assignments,
    }
}

/// One online batch. Carries no task information.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    /// Indices into `Dataset::train`.
    pub samples: Vec<usize>,
    pub step: usize,
    /// Samples delivered so far, including this batch.
    pub samples_seen: usize,
}

/// Fixed-size batches over the concatenated tasks. A task's tail shares a
/// batch with the head of the next task; only the final batch may be short.
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    step: usize,
}

pub fn iter_batches(schedule: &StreamSchedule, batch_size: usize) -> Result<BatchIter> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    Ok(BatchIter {
        order: schedule.stream_order().collect(),
        batch_size,
        pos: 0,
        step: 0,
    })
}

impl Iterator for BatchIter {
    type Item = StreamBatch;

    fn next(&mut self) -> Option<StreamBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = StreamBatch {
            samples: self.order[self.pos..end].to_vec(),
            step: self.step,
            samples_seen: end,
        };
        self.pos = end;
        self.step += 1;
        Some(batch)
    }
}
