//! Synthetic Gaussian-cluster classification world.
//!
//! Each class has a mean on a sphere of radius `separation` and samples
//! `mean + N(0, sigma² I)`. Class descriptors play the role of encoded
//! class prompts: they are frozen vectors whose alignment with the frozen
//! image encoder is controlled by a noise level `eta`.
//!
//! # File layout
//!
//! [`export_dataset`] writes a single text file. Line 1 is a JSON header
//! ([`DatasetHeader`]) carrying dimensions, class specs (mean and
//! descriptor), held-out ids and row counts. Every following line is one
//! sample: `class_id,x_0,...,x_{d_in-1}`. The first `train_rows` sample
//! lines are the train split, the remaining `test_rows` the test split.
//! Floats are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{streams, ModelParams};
use crate::numerics::{l2_normalize, SeededRng};
use crate::ClassId;

const FORMAT_TAG: &str = "oll-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: ClassId,
    pub mean: Vec<f64>,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_in: usize,
    pub d_desc: usize,
    pub classes: Vec<ClassSpec>,
    /// Grouped by class in ascending id order. Held-out classes have none.
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub held_out: Vec<ClassId>,
}

impl Dataset {
    pub fn class(&self, id: ClassId) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn descriptor(&self, id: ClassId) -> Option<&[f64]> {
        self.class(id).map(|c| c.descriptor.as_slice())
    }

    pub fn is_held_out(&self, id: ClassId) -> bool {
        self.held_out.contains(&id)
    }

    /// Class ids that may appear in a stream, ascending.
    pub fn trainable_classes(&self) -> Vec<ClassId> {
        self.classes
            .iter()
            .map(|c| c.id)
            .filter(|id| !self.is_held_out(*id))
            .collect()
    }

    /// Indices into `train` for one class.
    pub fn train_indices(&self, id: ClassId) -> Vec<usize> {
        self.train
            .iter()
            .enumerate()
            .filter(|(_, s)| s.y == id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn test_of<'a>(&'a self, ids: &'a [ClassId]) -> impl Iterator<Item = &'a Sample> + 'a {
        self.test.iter().filter(move |s| ids.contains(&s.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Classes that may be streamed.
    pub num_classes: usize,
    /// Additional classes reserved for zero-shot evaluation (test split only).
    pub held_out_count: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub d_in: usize,
    /// Descriptor dimension; `None` means `d_in`.
    pub d_desc: Option<usize>,
    pub cluster_sigma: f64,
    /// Radius of the class-mean sphere; `None` means `4 · cluster_sigma`
    /// (or 1 when sigma is 0).
    pub separation: Option<f64>,
    /// Descriptor misalignment noise.
    pub eta: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            held_out_count: 5,
            per_class_train: 100,
            per_class_test: 20,
            d_in: 32,
            d_desc: None,
            cluster_sigma: 1.0,
            separation: None,
            eta: DEFAULT_ETA,
        }
    }
}

/// Calibrated so the untuned model scores roughly 60-75% on the reference
/// world (see `tests/calibration.rs`).
pub const DEFAULT_ETA: f64 = 0.6;

impl DatasetConfig {
    pub fn d_desc(&self) -> usize {
        self.d_desc.unwrap_or(self.d_in)
    }

    pub fn separation(&self) -> f64 {
        match self.separation {
            Some(s) => s,
            None if self.cluster_sigma > 0.0 => 4.0 * self.cluster_sigma,
            None => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return bad("per-class sample counts must be at least 1");
        }
        if self.d_in == 0 || self.d_desc() == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.cluster_sigma >= 0.0) || !self.cluster_sigma.is_finite() {
            return bad("cluster_sigma must be finite and >= 0");
        }
        if !(self.separation() > 0.0) || !self.separation().is_finite() {
            return bad("separation must be finite and > 0");
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad("eta must be finite and >= 0");
        }
        Ok(())
    }
}

/// Draws class means and samples. Descriptors start as random unit vectors
/// (no alignment); [`make_descriptors`] replaces them.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = SeededRng::with_stream(seed, streams::DATASET);
    let total = config.num_classes + config.held_out_count;
    let d_desc = config.d_desc();
    let sep = config.separation();
    let sigma = config.cluster_sigma;

    let classes: Vec<ClassSpec> = (0..total)
        .map(|c| ClassSpec {
            id: ClassId(c as u32),
            mean: rng.unit_vector(config.d_in).iter().map(|v| sep * v).collect(),
            descriptor: rng.unit_vector(d_desc),
        })
        .collect();

    let mut draw = |spec: &ClassSpec, n: usize| -> Vec<Sample> {
        (0..n)
            .map(|_| Sample {
                x: spec.mean.iter().map(|m| m + sigma * rng.normal()).collect(),
                y: spec.id,
            })
            .collect()
    };
    let train = classes[..config.num_classes]
        .iter()
        .flat_map(|c| draw(c, config.per_class_train))
        .collect();
    let test = classes
        .iter()
        .flat_map(|c| draw(c, config.per_class_test))
        .collect();

    Ok(Dataset {
        d_in: config.d_in,
        d_desc,
        classes,
        train,
        test,
        held_out: (config.num_classes..total).map(|c| ClassId(c as u32)).collect(),
    })
}

/// Sets each descriptor to `normalize(W_txtᵀ · normalize(W_img · mean) + eta · g)`
/// with `g ~ N(0, I / d_desc)`.
///
/// The frozen image feature of the class mean is lifted into descriptor
/// space through the frozen text map, so at `eta = 0` the frozen text
/// feature of every descriptor equals the frozen image feature of its mean.
pub fn make_descriptors(dataset: &Dataset, model: &ModelParams, eta: f64, seed: u64) -> Result<Dataset> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("eta {eta} must be finite and >= 0")));
    }
    let w_img = &model.image.frozen;
    let w_txt = &model.text.frozen;
    if w_img.cols() != dataset.d_in || w_txt.cols() != dataset.d_desc {
        return Err(Error::InvalidConfig(format!(
            "model expects d_in={} d_desc={}, dataset has d_in={} d_desc={}",
            w_img.cols(),
            w_txt.cols(),
            dataset.d_in,
            dataset.d_desc
        )));
    }
    let mut rng = SeededRng::with_stream(seed, streams::DESCRIPTORS);
    let noise_std = 1.0 / (dataset.d_desc as f64).sqrt();
    let mut out = dataset.clone();
    for class in &mut out.classes {
        let base = l2_normalize(&w_img.matvec(&class.mean)?)?;
        let lifted = w_txt.matvec_t(&base)?;
        let noisy: Vec<f64> = lifted
            .iter()
            .map(|v| v + eta * noise_std * rng.normal())
            .collect();
        class.descriptor = l2_normalize(&noisy)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub d_in: usize,
    pub d_desc: usize,
    pub classes: Vec<ClassSpec>,
    pub held_out: Vec<ClassId>,
    pub train_rows: usize,
    pub test_rows: usize,
}

pub fn export_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        format: FORMAT_TAG.to_string(),
        d_in: dataset.d_in,
        d_desc: dataset.d_desc,
        classes: dataset.classes.clone(),
        held_out: dataset.held_out.clone(),
        train_rows: dataset.train.len(),
        test_rows: dataset.test.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for s in dataset.train.iter().chain(&dataset.test) {
        out.push_str(&s.y.to_string());
        for v in &s.x {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header: DatasetHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unknown format tag {:?}", header.format),
        });
    }
    let n_classes = header.classes.len();
    let mut samples = Vec::with_capacity(header.train_rows + header.test_rows);
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != header.d_in + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, found {}", header.d_in + 1, fields.len()),
            });
        }
        let y: u32 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad class id {:?}", fields[0]),
        })?;
        if y as usize >= n_classes {
            return Err(Error::Parse {
                line,
                msg: format!("class id {y} out of range"),
            });
        }
        let x = fields[1..]
            .iter()
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    msg: format!("bad value {f:?}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample { x, y: ClassId(y) });
    }
    if samples.len() != header.train_rows + header.test_rows {
        return Err(Error::Parse {
            line: last_line,
            msg: format!(
                "header promises {} rows, found {}",
                header.train_rows + header.test_rows,
                samples.len()
            ),
        });
    }
    let test = samples.split_off(header.train_rows);
    Ok(Dataset {
        d_in: header.d_in,
        d_desc: header.d_desc,
        classes: header.classes,
        train: samples,
        test,
        held_out: header.held_out,
    })
}
