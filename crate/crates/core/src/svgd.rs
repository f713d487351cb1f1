//! Stein variational gradient descent over prior particles.
//!
//! Each step moves particle `k` along
//!
//! ```text
//! (1/K) sum_j [ k(phi_j, phi_k) * score_j + grad_{phi_j} k(phi_j, phi_k) ]
//! ```
//!
//! with an RBF kernel whose bandwidth follows the median heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::PriorParticle;

pub const BANDWIDTH_SQ_FLOOR: f64 = 1e-8;
pub const DEFAULT_ETA: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<PriorParticle>,
    pub step_count: u64,
}

impl ParticleSet {
    pub fn new(particles: Vec<PriorParticle>) -> Result<Self> {
        let set = ParticleSet {
            particles,
            step_count: 0,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .particles
            .first()
            .ok_or_else(|| Error::invalid("particle set is empty"))?;
        if let Some(k) = self.particles.iter().position(|p| p.dim() != first.dim()) {
            return Err(Error::invalid(format!(
                "particle {k} covers {} parameters, particle 0 covers {}",
                self.particles[k].dim(),
                first.dim()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Kernel matrix and analytic gradients for one particle configuration.
#[derive(Debug, Clone)]
pub struct RbfKernel {
    pub bandwidth_sq: f64,
    k: usize,
    matrix: Vec<f64>,
    grads: Vec<Vec<f64>>,
}

impl RbfKernel {
    pub fn size(&self) -> usize {
        self.k
    }

    /// `k(phi_a, phi_b)`.
    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.k + b]
    }

    /// `grad_{phi_a} k(phi_a, phi_b)`.
    pub fn grad(&self, a: usize, b: usize) -> &[f64] {
        &self.grads[a * self.k + b]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `k(a, b) = exp(-|a - b|^2 / (2 h^2))` with
/// `h^2 = median pairwise squared distance / (2 ln(K + 1))`, floored.
pub fn rbf_kernel(particles: &[PriorParticle]) -> RbfKernel {
    let k = particles.len();
    let mut d2 = vec![0.0; k * k];
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let d = sq_dist(particles[a].stacked(), particles[b].stacked());
            d2[a * k + b] = d;
            d2[b * k + a] = d;
            pairs.push(d);
        }
    }
    let med = median(pairs).unwrap_or(0.0);
    let bandwidth_sq = (med / (2.0 * ((k + 1) as f64).ln())).max(BANDWIDTH_SQ_FLOOR);
    rbf_kernel_with_bandwidth(particles, bandwidth_sq, &d2)
}

fn rbf_kernel_with_bandwidth(particles: &[PriorParticle], bandwidth_sq: f64, d2: &[f64]) -> RbfKernel {
    let k = particles.len();
    let mut matrix = vec![0.0; k * k];
    let mut grads = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let v = if a == b {
                1.0
            } else {
                (-d2[a * k + b] / (2.0 * bandwidth_sq)).exp()
            };
            matrix[a * k + b] = v;
            let pa = particles[a].stacked();
            let pb = particles[b].stacked();
            grads.push(
                pa.iter()
                    .zip(pb)
                    .map(|(x, y)| -(x - y) / bandwidth_sq * v)
                    .collect(),
            );
        }
    }
    RbfKernel {
        bandwidth_sq,
        k,
        matrix,
        grads,
    }
}

/// Kernel with a fixed bandwidth instead of the median heuristic.
pub fn rbf_kernel_fixed(particles: &[PriorParticle], bandwidth_sq: f64) -> RbfKernel {
    let k = particles.len();
    let mut d2 = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            d2[a * k + b] = sq_dist(particles[a].stacked(), particles[b].stacked());
        }
    }
    rbf_kernel_with_bandwidth(particles, bandwidth_sq.max(BANDWIDTH_SQ_FLOOR), &d2)
}

fn check_scores(set: &ParticleSet, scores: &[Vec<f64>]) -> Result<()> {
    set.validate()?;
    if scores.len() != set.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} particles",
            scores.len(),
            set.len()
        )));
    }
    let n = set.particles[0].stacked().len();
    if let Some(k) = scores.iter().position(|s| s.len() != n) {
        return Err(Error::invalid(format!(
            "score {k} has length {}, particles have length {n}",
            scores[k].len()
        )));
    }
    Ok(())
}

/// The SVGD transport direction for every particle (before the step size).
pub fn svgd_direction(set: &ParticleSet, scores: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_scores(set, scores)?;
    let kernel = rbf_kernel(&set.particles);
    Ok(direction_with_kernel(&kernel, scores))
}

fn direction_with_kernel(kernel: &RbfKernel, scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = kernel.size();
    let n = scores[0].len();
    let inv_k = 1.0 / k as f64;
    (0..k)
        .map(|target| {
            let mut phi = vec![0.0; n];
            for (j, score) in scores.iter().enumerate() {
                let kv = kernel.value(j, target);
                let kg = kernel.grad(j, target);
                for ((p, s), g) in phi.iter_mut().zip(score).zip(kg) {
                    *p += kv * s + g;
                }
            }
            phi.iter_mut().for_each(|p| *p *= inv_k);
            phi
        })
        .collect()
}

fn apply_update(set: &ParticleSet, updates: &[Vec<f64>]) -> Result<ParticleSet> {
    let mut particles = Vec::with_capacity(set.len());
    for (k, (p, u)) in set.particles.iter().zip(updates).enumerate() {
        let mut next = p.clone();
        for (v, d) in next.stacked_mut().iter_mut().zip(u) {
            *v += d;
        }
        if next.stacked().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "SVGD update produced a non-finite value in particle {k}"
            )));
        }
        particles.push(next);
    }
    Ok(ParticleSet {
        particles,
        step_count: set.step_count + 1,
    })
}

/// One plain SVGD step with step size `eta`; returns a fresh set.
pub fn svgd_step(set: &ParticleSet, scores: &[Vec<f64>], eta: f64) -> Result<ParticleSet> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config(format!("step size must be positive, got {eta}")));
    }
    let dir = svgd_direction(set, scores)?;
    let updates: Vec<Vec<f64>> = dir
        .into_iter()
        .map(|d| d.into_iter().map(|v| eta * v).collect())
        .collect();
    apply_update(set, &updates)
}

/// How the SVGD direction turns into a parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `phi += eta * direction`.
    Plain,
    /// Per-coordinate Adam moment scaling of the direction (ascent).
    Adam,
}

/// Stateful driver that applies a [`StepRule`] with optional multiplicative
/// step-size decay.
#[derive(Debug, Clone)]
pub struct SvgdOptimizer {
    rule: StepRule,
    eta: f64,
    decay: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl SvgdOptimizer {
    pub fn new(rule: StepRule, eta: f64, decay: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {eta}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config(format!("decay must lie in (0, 1], got {decay}")));
        }
        Ok(SvgdOptimizer {
            rule,
            eta,
            decay,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn current_eta(&self) -> f64 {
        self.eta * self.decay.powf(self.steps as f64)
    }

    pub fn step(&mut self, set: &ParticleSet, scores: &[Vec<f64>]) -> Result<ParticleSet> {
        let eta = self.current_eta();
        let dir = svgd_direction(set, scores)?;
        self.steps += 1;
        let updates: Vec<Vec<f64>> = match self.rule {
            StepRule::Plain => dir
                .into_iter()
                .map(|d| d.into_iter().map(|v| eta * v).collect())
                .collect(),
            StepRule::Adam => {
                if self.m.len() != dir.len() {
                    self.m = dir.iter().map(|d| vec![0.0; d.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                dir.iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(d, (m, v))| {
                        d.iter()
                            .zip(m.iter_mut().zip(v.iter_mut()))
                            .map(|(&g, (mi, vi))| {
                                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                                eta * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS)
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        apply_update(set, &updates)
    }
}
