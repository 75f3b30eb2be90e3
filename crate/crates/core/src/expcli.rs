//! Config-driven experiment runner.
//!
//! A config (TOML, or JSON when the file ends in `.json`) describes the
//! synthetic world, the stream regime, the model and the optimizer, plus a
//! list of seeds and strategies. Every `(strategy, seed)` pair produces a
//! run directory:
//!
//! ```text
//! <out>/<strategy>/seed-<n>/
//!     metrics.json     run echo and summary scalars
//!     curve.csv        samples_seen,accuracy
//!     tasks.csv        task,samples_seen,accuracy
//!     confusion.csv    class_id,role,home_task,pred_<id>...
//!     ledger.csv       step,class_id,bucket,norm
//!     zero_shot.csv    phase,accuracy
//!     schedule.csv     step,sample_id,class_id,role,home_task
//!     checkpoint.json  final model parameters
//! <out>/summary.json
//! ```
//!
//! The summary is rebuilt from the CSVs after the runs finish, so every
//! number in it can be recomputed from the run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, load_dataset, make_descriptors, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::objective::{GradientLedger, Strategy};
use crate::streams::{build_schedule, StreamConfig, StreamSchedule};
use crate::trainer::{
    a_auc, a_avg, a_last, new_class_bias_by_home, train_online, CurvePoint, RunArtifacts, TrainConfig,
};
use crate::ClassId;

pub const OUTPUT_ROOT_ENV: &str = "OLL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    /// Load this file instead of generating; descriptors are used as stored.
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub generate: DatasetConfig,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            path: None,
            generate: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetBlock,
    pub stream: StreamConfig,
    pub model: ModelConfig,
    /// `train.strategy` is ignored; `strategies` selects the runs.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    /// The reference configuration.
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            strategies: vec![Strategy::Sit, Strategy::Ait],
            output_dir: None,
            dataset: DatasetBlock::default(),
            stream: StreamConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: serde_json::Value = toml::from_str(text).map_err(|e| Error::config("<toml>", e.message()))?;
        Self::from_value(value)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))?;
        Self::from_value(value)
    }

    fn from_value(value: serde_json::Value) -> Result<Self> {
        let config: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidConfig(msg) => Error::config(field, msg),
                other => other,
            })
        };
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies", "at least one strategy is required"));
        }
        if self.dataset.path.is_none() {
            wrap("dataset", self.dataset.generate.validate())?;
            if self.dataset.generate.d_in != self.model.d_in {
                return Err(Error::config("model.d_in", "must equal dataset.d_in"));
            }
            if self.dataset.generate.d_desc() != self.model.d_desc {
                return Err(Error::config("model.d_desc", "must equal the dataset descriptor dimension"));
            }
        }
        wrap("model", self.model.validate())?;
        wrap("train", self.train.validate())?;
        let s = &self.stream;
        if s.tasks == 0 {
            return Err(Error::config("stream.tasks", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&s.disjoint_fraction) {
            return Err(Error::config("stream.disjoint_fraction", "must be in [0, 1]"));
        }
        if s.blurry_level >= 100 {
            return Err(Error::config("stream.blurry_level", "must be < 100"));
        }
        Ok(())
    }
}

/// Everything a run needs, derived deterministically from config and seed.
#[derive(Debug, Clone)]
pub struct World {
    pub dataset: Dataset,
    pub model: ModelParams,
    pub schedule: StreamSchedule,
}

pub fn build_world(config: &ExperimentConfig, seed: u64) -> Result<World> {
    let model = ModelParams::init(&config.model, seed)?;
    let dataset = match &config.dataset.path {
        Some(path) => load_dataset(path)?,
        None => {
            let raw = generate_dataset(&config.dataset.generate, seed)?;
            make_descriptors(&raw, &model, config.dataset.generate.eta, seed)?
        }
    };
    let schedule = build_schedule(&dataset, &config.stream, seed)?;
    Ok(World {
        dataset,
        model,
        schedule,
    })
}

pub fn run_single(config: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<(World, RunArtifacts)> {
    let world = build_world(config, seed)?;
    let train = TrainConfig {
        strategy,
        ..config.train.clone()
    };
    let artifacts = train_online(&world.dataset, &world.schedule, world.model.clone(), &train)?;
    Ok((world, artifacts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub strategy: Strategy,
    pub seed: u64,
    pub tasks: usize,
    pub total_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub a_auc: f64,
    pub a_avg: f64,
    pub a_last: f64,
    pub new_class_bias: f64,
    pub zero_shot_before: Option<f64>,
    pub zero_shot_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: RunEcho,
    pub metrics: MetricSet,
}

pub fn run_dir(root: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    root.join(strategy.name()).join(format!("seed-{seed}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_run(dir: &Path, world: &World, artifacts: &RunArtifacts, strategy: Strategy, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = RunEcho {
        strategy,
        seed,
        tasks: world.schedule.config.tasks,
        total_samples: artifacts.total_samples,
    };
    let metrics = RunMetrics {
        run: echo,
        metrics: MetricSet {
            a_auc: artifacts.a_auc,
            a_avg: artifacts.a_avg,
            a_last: artifacts.a_last,
            new_class_bias: artifacts.new_class_bias,
            zero_shot_before: artifacts.zero_shot_before,
            zero_shot_after: artifacts.zero_shot_after,
        },
    };
    write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;

    let mut curve = String::from("samples_seen,accuracy\n");
    for p in &artifacts.curve {
        curve.push_str(&format!("{},{}\n", p.samples_seen, p.accuracy));
    }
    write(&dir.join("curve.csv"), &curve)?;

    let mut tasks = String::from("task,samples_seen,accuracy\n");
    for t in &artifacts.task_accuracies {
        tasks.push_str(&format!("{},{},{}\n", t.task, t.samples_seen, t.accuracy));
    }
    write(&dir.join("tasks.csv"), &tasks)?;

    let cm = &artifacts.confusion;
    let mut conf = String::from("class_id,role,home_task");
    for c in &cm.classes {
        conf.push_str(&format!(",pred_{c}"));
    }
    conf.push('\n');
    for (row, c) in cm.classes.iter().enumerate() {
        let a = world
            .schedule
            .assignment(*c)
            .ok_or_else(|| Error::ConfigMismatch(format!("class {c} missing from schedule")))?;
        conf.push_str(&format!("{c},{},{}", a.role, a.home_task));
        for k in &cm.counts[row] {
            conf.push_str(&format!(",{k}"));
        }
        conf.push('\n');
    }
    write(&dir.join("confusion.csv"), &conf)?;

    artifacts.ledger.export_csv(&dir.join("ledger.csv"))?;

    let mut zs = String::from("phase,accuracy\n");
    for (phase, v) in [("before", artifacts.zero_shot_before), ("after", artifacts.zero_shot_after)] {
        if let Some(v) = v {
            zs.push_str(&format!("{phase},{v}\n"));
        }
    }
    write(&dir.join("zero_shot.csv"), &zs)?;

    world.schedule.export_csv(&world.dataset, &dir.join("schedule.csv"))?;
    artifacts.model.save(&dir.join("checkpoint.json"))
}

fn csv_rows(text: &str, path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) if header.is_empty() && !h.is_empty() => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("{}: expected header {header:?}", path.display()),
            })
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n, l.split(',').map(|s| s.trim().to_string()).collect()))
        .collect())
}

fn field<T: std::str::FromStr>(row: &[String], i: usize, line: usize) -> Result<T> {
    row.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad or missing column {i}"),
        })
}

pub fn read_curve(dir: &Path) -> Result<Vec<CurvePoint>> {
    let path = dir.join("curve.csv");
    let text = read(&path)?;
    let points = csv_rows(&text, &path, "samples_seen,accuracy")?
        .into_iter()
        .map(|(line, r)| {
            Ok(CurvePoint {
                samples_seen: field(&r, 0, line)?,
                accuracy: field(&r, 1, line)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if points.is_empty() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(points)
}

pub fn read_task_accuracies(dir: &Path) -> Result<Vec<f64>> {
    let path = dir.join("tasks.csv");
    let text = read(&path)?;
    csv_rows(&text, &path, "task,samples_seen,accuracy")?
        .into_iter()
        .map(|(line, r)| field(&r, 2, line))
        .collect()
}

/// `(class, role tag, home task, prediction counts)` per confusion row.
pub type ConfusionRow = (ClassId, String, usize, Vec<u64>);

pub fn read_confusion(dir: &Path) -> Result<Vec<ConfusionRow>> {
    let path = dir.join("confusion.csv");
    let text = read(&path)?;
    csv_rows(&text, &path, "")?
        .into_iter()
        .map(|(line, r)| {
            let counts = (3..r.len()).map(|i| field(&r, i, line)).collect::<Result<Vec<u64>>>()?;
            Ok((ClassId(field(&r, 0, line)?), r[1].clone(), field(&r, 2, line)?, counts))
        })
        .collect()
}

pub fn read_ledger(dir: &Path) -> Result<GradientLedger> {
    GradientLedger::parse_csv(&read(&dir.join("ledger.csv"))?)
}

/// Recomputes a run's metrics from its CSV artifacts.
pub fn read_run(dir: &Path) -> Result<RunMetrics> {
    let echo: RunMetrics = serde_json::from_str(&read(&dir.join("metrics.json"))?)?;
    let run = echo.run;
    let curve = read_curve(dir)?;
    let tasks = read_task_accuracies(dir)?;
    let confusion = read_confusion(dir)?;
    let homes: Vec<usize> = confusion.iter().map(|r| r.2).collect();
    let counts: Vec<Vec<u64>> = confusion.into_iter().map(|r| r.3).collect();

    let zs_path = dir.join("zero_shot.csv");
    let zs_text = read(&zs_path)?;
    let mut zero_shot_before = None;
    let mut zero_shot_after = None;
    for (line, r) in csv_rows(&zs_text, &zs_path, "phase,accuracy")? {
        let v: f64 = field(&r, 1, line)?;
        match r[0].as_str() {
            "before" => zero_shot_before = Some(v),
            "after" => zero_shot_after = Some(v),
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown phase {other:?}"),
                })
            }
        }
    }
    Ok(RunMetrics {
        metrics: MetricSet {
            a_auc: a_auc(&curve, run.total_samples)?,
            a_avg: a_avg(&tasks)?,
            a_last: a_last(&tasks)?,
            new_class_bias: new_class_bias_by_home(&homes, &counts, run.tasks.saturating_sub(1)),
            zero_shot_before,
            zero_shot_after,
        },
        run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub a_auc: Stat,
    pub a_avg: Stat,
    pub a_last: Stat,
    pub new_class_bias: Stat,
    pub zero_shot_before: Option<Stat>,
    pub zero_shot_after: Option<Stat>,
}

impl MetricStats {
    pub fn of(runs: &[RunMetrics]) -> Option<Self> {
        let col = |f: fn(&MetricSet) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r.metrics)).collect() };
        let opt = |f: fn(&MetricSet) -> Option<f64>| -> Option<Stat> {
            runs.iter().map(|r| f(&r.metrics)).collect::<Option<Vec<f64>>>().and_then(|v| Stat::of(&v))
        };
        Some(Self {
            a_auc: Stat::of(&col(|m| m.a_auc))?,
            a_avg: Stat::of(&col(|m| m.a_avg))?,
            a_last: Stat::of(&col(|m| m.a_last))?,
            new_class_bias: Stat::of(&col(|m| m.new_class_bias))?,
            zero_shot_before: opt(|m| m.zero_shot_before),
            zero_shot_after: opt(|m| m.zero_shot_after),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: Vec<RunMetrics>,
    pub stats: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub strategies: Vec<StrategySummary>,
}

/// Runs every `(strategy, seed)` pair, writes run directories and
/// `summary.json` under `out`. Runs execute on scoped threads; results are
/// gathered in config order.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    config.validate()?;
    let jobs: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(strategy, seed)| {
                scope.spawn(move || {
                    let (world, artifacts) = run_single(config, strategy, seed)?;
                    write_run(&run_dir(out, strategy, seed), &world, &artifacts, strategy, seed)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::ConfigMismatch("run thread panicked".into()))))
            .collect()
    });
    for r in results {
        r?;
    }

    let mut echo = config.clone();
    echo.output_dir = Some(out.to_path_buf());
    let mut strategies = Vec::new();
    for &strategy in &config.strategies {
        let runs = config
            .seeds
            .iter()
            .map(|&seed| read_run(&run_dir(out, strategy, seed)))
            .collect::<Result<Vec<_>>>()?;
        let stats = MetricStats::of(&runs).expect("seeds non-empty");
        strategies.push(StrategySummary { strategy, runs, stats });
    }
    let summary = Summary {
        config: echo,
        strategies,
    };
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Pass thresholds for [`compare`]. Defaults come from the pilot sweep
/// recorded in `examples/pilot.rs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareThresholds {
    /// Minimum mean of per-seed `A_last(left) − A_last(right)`.
    pub min_last_gap: f64,
    /// Fraction of seeds on which left must beat right on `A_last`.
    pub min_win_fraction: f64,
    /// Right's new-class bias must be at least this multiple of left's.
    pub min_bias_ratio: f64,
}

impl Default for CompareThresholds {
    fn default() -> Self {
        Self {
            min_last_gap: MIN_LAST_GAP,
            min_win_fraction: 0.8,
            min_bias_ratio: 1.5,
        }
    }
}

/// Pass threshold on the mean per-seed `A_last` gap between symmetric and
/// asymmetric tuning on the reference config. The pilot sweep
/// (`examples/pilot.rs`) measured a mean of 0.0255 over seeds 1-5.
pub const MIN_LAST_GAP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub left: Stat,
    pub right: Stat,
    /// Per-seed `left − right`.
    pub delta: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub deltas: Vec<MetricDelta>,
    pub checks: Vec<Check>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("seeds: {:?}\n", self.seeds);
        out.push_str(&format!(
            "{:<18} {:>17} {:>17} {:>17}\n",
            "metric", "left", "right", "delta"
        ));
        for d in &self.deltas {
            out.push_str(&format!(
                "{:<18} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>+8.4} ± {:<6.4}\n",
                d.metric, d.left.mean, d.left.std, d.right.mean, d.right.std, d.delta.mean, d.delta.std
            ));
        }
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {}: {:.4} (threshold {:.4})\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold
            ));
        }
        out
    }
}

fn seed_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(seed) = name.to_str().and_then(|n| n.strip_prefix("seed-")).and_then(|s| s.parse().ok()) {
            out.push((seed, entry.path()));
        }
    }
    if out.is_empty() {
        return Err(Error::MissingArtifact(dir.join("seed-*")));
    }
    out.sort();
    Ok(out)
}

/// Side-by-side metrics of two strategy directories (`<out>/sit`,
/// `<out>/ait`), paired by seed.
pub fn compare(left: &Path, right: &Path, thresholds: &CompareThresholds) -> Result<Comparison> {
    let l = seed_dirs(left)?;
    let r = seed_dirs(right)?;
    let ls: Vec<u64> = l.iter().map(|(s, _)| *s).collect();
    let rs: Vec<u64> = r.iter().map(|(s, _)| *s).collect();
    if ls != rs {
        return Err(Error::SeedMismatch { left: ls, right: rs });
    }
    let lm = l.iter().map(|(_, p)| read_run(p)).collect::<Result<Vec<_>>>()?;
    let rm = r.iter().map(|(_, p)| read_run(p)).collect::<Result<Vec<_>>>()?;

    let mut deltas = Vec::new();
    let metrics: [(&str, fn(&MetricSet) -> Option<f64>); 5] = [
        ("a_auc", |m| Some(m.a_auc)),
        ("a_avg", |m| Some(m.a_avg)),
        ("a_last", |m| Some(m.a_last)),
        ("new_class_bias", |m| Some(m.new_class_bias)),
        ("zero_shot_after", |m| m.zero_shot_after),
    ];
    for (name, get) in metrics {
        let a: Option<Vec<f64>> = lm.iter().map(|m| get(&m.metrics)).collect();
        let b: Option<Vec<f64>> = rm.iter().map(|m| get(&m.metrics)).collect();
        if let (Some(a), Some(b)) = (a, b) {
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            deltas.push(MetricDelta {
                metric: name.to_string(),
                left: Stat::of(&a).expect("non-empty"),
                right: Stat::of(&b).expect("non-empty"),
                delta: Stat::of(&d).expect("non-empty"),
            });
        }
    }

    let n = ls.len() as f64;
    let gap = deltas.iter().find(|d| d.metric == "a_last").expect("always present").delta.mean;
    let wins = lm
        .iter()
        .zip(&rm)
        .filter(|(a, b)| a.metrics.a_last > b.metrics.a_last)
        .count() as f64;
    let bias_wins = lm
        .iter()
        .zip(&rm)
        .filter(|(a, b)| b.metrics.new_class_bias >= thresholds.min_bias_ratio * a.metrics.new_class_bias)
        .count() as f64;
    let checks = vec![
        Check {
            name: "mean A_last gap (left - right)".into(),
            value: gap,
            threshold: thresholds.min_last_gap,
            pass: gap >= thresholds.min_last_gap,
        },
        Check {
            name: "fraction of seeds with left A_last > right".into(),
            value: wins / n,
            threshold: thresholds.min_win_fraction,
            pass: wins / n >= thresholds.min_win_fraction,
        },
        Check {
            name: format!("fraction of seeds with right bias >= {}x left", thresholds.min_bias_ratio),
            value: bias_wins / n,
            threshold: thresholds.min_win_fraction,
            pass: bias_wins / n >= thresholds.min_win_fraction,
        },
    ];
    Ok(Comparison {
        seeds: ls,
        deltas,
        checks,
    })
}

/// Output directory precedence: explicit flag, config, `$OLL_OUTPUT_ROOT/<stem>`,
/// then `runs/<stem>`.
pub fn resolve_output(flag: Option<&Path>, config: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output_dir {
        return p.clone();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(stem),
        None => PathBuf::from("runs").join(stem),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_regime_names_the_field() {
        let err = ExperimentConfig::from_toml("[stream]\nregime = \"fuzzy\"\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "stream.regime"),
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::from_json(r#"{"stream": {"regime": "fuzzy"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "stream.regime"));
    }

    #[test]
    fn validation_names_fields() {
        let err = ExperimentConfig::from_toml("seeds = []\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "seeds"));
        let err = ExperimentConfig::from_toml("[train]\nbatch_size = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "train"));
        let err = ExperimentConfig::from_toml("[model]\nd_in = 16\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "model.d_in"));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn stat_mean_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
