//! Hoehn & Yahr stage labels.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A Hoehn & Yahr stage such as `0`, `2` or `2.5`.
///
/// Stages are compared by value; display drops a trailing `.0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stage(pub f64);

impl Stage {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Stage {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Stage {}

impl PartialOrd for Stage {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Stage {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.fract() == 0.0 {
            write!(f, "{}", self.0 as i64)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl From<f64> for Stage {
    fn from(v: f64) -> Self {
        Stage(v)
    }
}

/// Default classifier label space: controls at 0, PD subjects at 2, 2.5, 3.
pub fn default_class_labels() -> Vec<Stage> {
    vec![Stage(0.0), Stage(2.0), Stage(2.5), Stage(3.0)]
}
