use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled fingerprint: feature vector and ground-truth position in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: [f64; 2],
}

/// A labeled set of fingerprints drawn from a single environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub domain_id: u32,
    pub samples: Vec<Sample>,
}

impl Task {
    pub fn new(domain_id: u32, samples: Vec<Sample>) -> Self {
        Task { domain_id, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature length shared by all samples, or `None` for an empty task.
    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.x.len())
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid(format!(
                "task from domain {} has no samples",
                self.domain_id
            )));
        }
        Ok(())
    }

    /// Split off the first `n` samples; returns `(head, tail)`.
    pub fn split_at(&self, n: usize) -> (Task, Task) {
        let n = n.min(self.samples.len());
        (
            Task::new(self.domain_id, self.samples[..n].to_vec()),
            Task::new(self.domain_id, self.samples[n..].to_vec()),
        )
    }
}
