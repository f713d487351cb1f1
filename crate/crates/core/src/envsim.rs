//! Synthetic indoor RF environments and task generation.
//!
//! A fingerprint has `bins_per_anchor` frequency bins for every anchor. The
//! level in bin `b` for anchor `a` at position `p` is
//!
//! ```text
//! ref_level - 10 * gamma * log10(max(d, d0) / d0)        path loss
//!   + gain_a                                              per-domain anchor gain
//!   + sum_r A_r cos(2 pi (1 + b / B) excess_r / lambda_r + psi_r)   multipath
//!   + N(0, shadowing^2)                                   per-measurement shadowing
//! ```
//!
//! where `excess_r` is the extra path length via reflector `r`. The anchor
//! gains, reflector positions, amplitudes and phases are fixed per domain
//! and derived from `domain_seed`; only the shadowing term consumes the
//! caller's rng. Environments of one suite share room, anchors and path-loss
//! exponent and differ in those domain realizations.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::task::{Sample, Task};

/// Reference distance for the log-distance model; shorter distances are clamped.
pub const D0: f64 = 0.1;
pub const DEFAULT_ROOM: [f64; 2] = [10.0, 8.0];
pub const DEFAULT_BINS_PER_ANCHOR: usize = 6;

pub const TRAIN_TASK_SIZE: usize = 50;
pub const FINETUNE_SIZE: usize = 30;
pub const TEST_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    /// `(width, height)` in meters; positions live in `[0, w] x [0, h]`.
    pub room: [f64; 2],
    pub anchors: Vec<[f64; 2]>,
    pub bins_per_anchor: usize,
    pub feature_dim: usize,
    pub path_loss_exponent: f64,
    /// Level at the reference distance, dB.
    pub ref_level_db: f64,
    pub shadowing_sigma_db: f64,
    pub n_multipath: usize,
    pub multipath_amplitude_db: f64,
    /// Std of the per-domain anchor gain offsets, dB.
    pub anchor_gain_sigma_db: f64,
    pub domain_seed: u64,
    pub los: bool,
}

#[derive(Debug, Clone)]
struct Reflector {
    pos: [f64; 2],
    amplitude: f64,
    phase: f64,
    wavelength: f64,
}

/// Deterministic per-domain realization derived from `domain_seed`.
#[derive(Debug, Clone)]
struct DomainRealization {
    gains: Vec<f64>,
    reflectors: Vec<Reflector>,
}

impl EnvironmentSpec {
    /// Default geometry: 10 m x 8 m room, four anchors near the corners.
    pub fn default_geometry(domain_seed: u64, los: bool) -> Self {
        let [w, h] = DEFAULT_ROOM;
        let anchors = vec![[0.5, 0.5], [w - 0.5, 0.5], [w - 0.5, h - 0.5], [0.5, h - 0.5]];
        let (shadowing, n_multipath, amplitude) = if los { (1.0, 2, 1.5) } else { (2.0, 5, 3.0) };
        EnvironmentSpec {
            room: DEFAULT_ROOM,
            feature_dim: anchors.len() * DEFAULT_BINS_PER_ANCHOR,
            anchors,
            bins_per_anchor: DEFAULT_BINS_PER_ANCHOR,
            path_loss_exponent: 3.0,
            ref_level_db: 80.0,
            shadowing_sigma_db: shadowing,
            n_multipath,
            multipath_amplitude_db: amplitude,
            anchor_gain_sigma_db: 3.0,
            domain_seed,
            los,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.room;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::config("room dimensions must be positive"));
        }
        if self.anchors.is_empty() {
            return Err(Error::config("at least one anchor is required"));
        }
        if let Some(i) = self
            .anchors
            .iter()
            .position(|a| !(0.0..=w).contains(&a[0]) || !(0.0..=h).contains(&a[1]))
        {
            return Err(Error::config(format!("anchor {i} lies outside the room")));
        }
        if self.bins_per_anchor == 0 {
            return Err(Error::config("bins_per_anchor must be positive"));
        }
        if self.feature_dim != self.anchors.len() * self.bins_per_anchor {
            return Err(Error::config(format!(
                "feature_dim {} != anchors ({}) x bins ({})",
                self.feature_dim,
                self.anchors.len(),
                self.bins_per_anchor
            )));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::config("path_loss_exponent must be positive"));
        }
        if !(self.shadowing_sigma_db >= 0.0)
            || !(self.multipath_amplitude_db >= 0.0)
            || !(self.anchor_gain_sigma_db >= 0.0)
        {
            return Err(Error::config("noise scales must be non-negative"));
        }
        Ok(())
    }

    pub fn contains(&self, pos: [f64; 2]) -> bool {
        (0.0..=self.room[0]).contains(&pos[0]) && (0.0..=self.room[1]).contains(&pos[1])
    }

    fn realization(&self) -> DomainRealization {
        let mut r = rng::rng_for(self.domain_seed, stream::DOMAIN, 0);
        let gains = self
            .anchors
            .iter()
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                self.anchor_gain_sigma_db * z
            })
            .collect();
        let reflectors = (0..self.n_multipath)
            .map(|_| Reflector {
                pos: [
                    r.random_range(0.0..=self.room[0]),
                    r.random_range(0.0..=self.room[1]),
                ],
                amplitude: self.multipath_amplitude_db * r.random_range(0.5..1.0),
                phase: r.random_range(0.0..std::f64::consts::TAU),
                wavelength: r.random_range(2.0..6.0),
            })
            .collect();
        DomainRealization { gains, reflectors }
    }

    fn noiseless(&self, real: &DomainRealization, pos: [f64; 2], out: &mut Vec<f64>) {
        out.clear();
        let bins = self.bins_per_anchor as f64;
        for (a, anchor) in self.anchors.iter().enumerate() {
            let d = dist(pos, *anchor).max(D0);
            let base = self.ref_level_db - 10.0 * self.path_loss_exponent * (d / D0).log10()
                + real.gains[a];
            for b in 0..self.bins_per_anchor {
                let freq = 1.0 + b as f64 / bins;
                let ripple: f64 = real
                    .reflectors
                    .iter()
                    .map(|r| {
                        let excess = dist(pos, r.pos) + dist(r.pos, *anchor) - d;
                        r.amplitude
                            * (std::f64::consts::TAU * freq * excess / r.wavelength + r.phase).cos()
                    })
                    .sum();
                out.push(base + ripple);
            }
        }
    }

    /// Raw (unnormalized) fingerprint at `pos`. Shadowing noise comes from `rng`.
    pub fn gen_fingerprint<R: Rng + ?Sized>(&self, pos: [f64; 2], rng: &mut R) -> Result<Vec<f64>> {
        if !self.contains(pos) {
            return Err(Error::invalid(format!(
                "position ({}, {}) is outside the {} x {} room",
                pos[0], pos[1], self.room[0], self.room[1]
            )));
        }
        let real = self.realization();
        let mut out = Vec::with_capacity(self.feature_dim);
        self.noiseless(&real, pos, &mut out);
        self.add_shadowing(&mut out, rng);
        Ok(out)
    }

    fn add_shadowing<R: Rng + ?Sized>(&self, features: &mut [f64], rng: &mut R) {
        if self.shadowing_sigma_db > 0.0 {
            let n = Normal::new(0.0, self.shadowing_sigma_db).expect("non-negative std");
            for f in features.iter_mut() {
                *f += n.sample(rng);
            }
        }
    }

    /// `m` uniformly placed raw fingerprints; `domain_id` tags the task.
    pub fn sample_task<R: Rng + ?Sized>(&self, domain_id: u32, m: usize, rng: &mut R) -> Result<Task> {
        if m < 1 {
            return Err(Error::invalid("a task needs at least one sample"));
        }
        let real = self.realization();
        let mut samples = Vec::with_capacity(m);
        for _ in 0..m {
            let pos = [
                rng.random_range(0.0..=self.room[0]),
                rng.random_range(0.0..=self.room[1]),
            ];
            let mut x = Vec::with_capacity(self.feature_dim);
            self.noiseless(&real, pos, &mut x);
            self.add_shadowing(&mut x, rng);
            samples.push(Sample { x, y: pos });
        }
        Ok(Task::new(domain_id, samples))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Per-feature standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit on a set of tasks.
    pub fn fit(tasks: &[Task]) -> Result<Self> {
        let dim = tasks
            .iter()
            .find_map(Task::feature_dim)
            .ok_or_else(|| Error::invalid("cannot fit normalization on empty data"))?;
        let mut n = 0.0;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for s in tasks.iter().flat_map(|t| &t.samples) {
            if s.x.len() != dim {
                return Err(Error::invalid("ragged feature vectors"));
            }
            n += 1.0;
            for i in 0..dim {
                let delta = s.x[i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (s.x[i] - mean[i]);
            }
        }
        let std = m2
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply_task(&self, task: &mut Task) {
        for s in &mut task.samples {
            self.apply(&mut s.x);
        }
    }
}

/// Environments of one site plus the feature normalization fitted on the
/// training environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSuite {
    pub environments: Vec<EnvironmentSpec>,
    pub normalization: Normalization,
}

/// Samples per environment used to fit the normalization.
const NORMALIZATION_SAMPLES: usize = 2000;

/// `d_train` training environments plus one held-out environment, all sharing
/// geometry and path-loss exponent. Domain seeds derive from `seed`; the
/// normalization is fitted on the first `d_train` environments.
pub fn make_suite(d_train: usize, seed: u64, los: bool) -> Result<EnvironmentSuite> {
    if d_train < 1 {
        return Err(Error::config("at least one training environment is required"));
    }
    let environments: Vec<EnvironmentSpec> = (0..=d_train as u64)
        .map(|i| EnvironmentSpec::default_geometry(rng::derive_seed(seed, stream::DOMAIN, i), los))
        .collect();
    let fit_tasks = environments[..d_train]
        .iter()
        .enumerate()
        .map(|(i, env)| {
            let mut r = rng::rng_for(seed, stream::DATASET, u64::MAX - i as u64);
            env.sample_task(i as u32, NORMALIZATION_SAMPLES, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let normalization = Normalization::fit(&fit_tasks)?;
    Ok(EnvironmentSuite {
        environments,
        normalization,
    })
}

impl EnvironmentSuite {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .environments
            .first()
            .ok_or_else(|| Error::config("suite has no environments"))?;
        for env in &self.environments {
            env.validate()?;
            if env.feature_dim != first.feature_dim {
                return Err(Error::config("environments disagree on feature_dim"));
            }
        }
        if self.normalization.mean.len() != first.feature_dim
            || self.normalization.std.len() != first.feature_dim
        {
            return Err(Error::config("normalization length does not match feature_dim"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.environments.first().map_or(0, |e| e.feature_dim)
    }

    /// Normalized task of `m` samples from environment `env_index`.
    pub fn sample_task<R: Rng + ?Sized>(&self, env_index: usize, m: usize, rng: &mut R) -> Result<Task> {
        let env = self
            .environments
            .get(env_index)
            .ok_or_else(|| Error::invalid(format!("no environment {env_index}")))?;
        let mut task = env.sample_task(env_index as u32, m, rng)?;
        self.normalization.apply_task(&mut task);
        Ok(task)
    }

    /// `count` normalized tasks spread round-robin over `env_indices`, each
    /// generated from its own derived seed.
    pub fn sample_tasks(&self, env_indices: &[usize], count: usize, m: usize, seed: u64) -> Result<Vec<Task>> {
        if env_indices.is_empty() {
            return Err(Error::config("no environments to sample tasks from"));
        }
        (0..count)
            .map(|i| {
                let env = env_indices[i % env_indices.len()];
                let mut r = rng::rng_for(seed, stream::DATASET, i as u64);
                self.sample_task(env, m, &mut r)
            })
            .collect()
    }
}
