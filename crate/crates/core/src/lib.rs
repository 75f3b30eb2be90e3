//! Online lifelong learning laboratory.
//!
//! Builds a synthetic classification world, streams it through class-incremental
//! or blurry-boundary schedules, tunes a frozen linear dual encoder with
//! symmetric or asymmetric image-text InfoNCE, and reports anytime-inference
//! metrics alongside a per-class gradient ledger.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod datagen;
pub mod error;
pub mod expcli;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod plot;
pub mod streams;
pub mod trainer;

pub use error::{Error, Result};

/// Opaque class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
