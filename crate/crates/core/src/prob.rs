//! Diagonal-Gaussian weight priors and the spherical hyper-prior over them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Architecture, FlatParams};

/// Log-std at or below this value is treated as a point mass (sigma = 0).
pub const LOG_SIGMA_FLOOR: f64 = -40.0;

pub const DEFAULT_SIGMA_P: f64 = 0.5;

/// Parameters `(mu, log_sigma)` of a diagonal Gaussian over network weights.
///
/// Stored as one stacked vector of length `2P` (`mu` block first) because
/// that is the space SVGD moves particles in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParticleRecord", try_from = "ParticleRecord")]
pub struct PriorParticle {
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParticleRecord {
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
}

impl From<PriorParticle> for ParticleRecord {
    fn from(p: PriorParticle) -> Self {
        ParticleRecord {
            mu: p.mu().to_vec(),
            log_sigma: p.log_sigma().to_vec(),
        }
    }
}

impl TryFrom<ParticleRecord> for PriorParticle {
    type Error = Error;

    fn try_from(r: ParticleRecord) -> Result<Self> {
        PriorParticle::new(r.mu, r.log_sigma)
    }
}

impl PriorParticle {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::invalid(format!(
                "mu has length {}, log_sigma has length {}",
                mu.len(),
                log_sigma.len()
            )));
        }
        let mut values = mu;
        values.extend(log_sigma);
        Self::from_stacked(values)
    }

    /// Build from a stacked `(mu, log_sigma)` vector of even length.
    pub fn from_stacked(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(Error::invalid("stacked particle vector must have even length"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("particle coordinate {i} is not finite")));
        }
        Ok(PriorParticle { values })
    }

    /// Deterministic prior concentrated on `mu`.
    pub fn point_mass(mu: Vec<f64>) -> Self {
        let n = mu.len();
        let mut values = mu;
        values.extend(std::iter::repeat_n(LOG_SIGMA_FLOOR, n));
        PriorParticle { values }
    }

    /// Number of network parameters `P` this prior covers.
    pub fn dim(&self) -> usize {
        self.values.len() / 2
    }

    pub fn mu(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.values[self.dim()..]
    }

    pub fn stacked(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn stacked_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Per-coordinate standard deviation, with the point-mass floor applied.
    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma().iter().map(|&l| sigma_of(l)).collect()
    }

    pub fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if self.dim() != arch.param_count() {
            return Err(Error::invalid(format!(
                "particle covers {} parameters, architecture has {}",
                self.dim(),
                arch.param_count()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigma_of(log_sigma: f64) -> f64 {
    if log_sigma <= LOG_SIGMA_FLOOR {
        0.0
    } else {
        log_sigma.exp()
    }
}

/// Zero-centered spherical Gaussian over stacked particle vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub sigma_p: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            sigma_p: DEFAULT_SIGMA_P,
        }
    }
}

impl HyperPrior {
    pub fn new(sigma_p: f64) -> Result<Self> {
        if !(sigma_p > 0.0 && sigma_p.is_finite()) {
            return Err(Error::config(format!("sigma_p must be positive, got {sigma_p}")));
        }
        Ok(HyperPrior { sigma_p })
    }

    /// Draw a particle for a network with `dim` parameters.
    pub fn sample_particle<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> PriorParticle {
        let values = (0..2 * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma_p * z
            })
            .collect();
        PriorParticle { values }
    }

    /// Log-density (normalizing constant included) and its gradient.
    pub fn log_density_grad(&self, phi: &PriorParticle) -> (f64, Vec<f64>) {
        let var = self.sigma_p * self.sigma_p;
        let n = phi.values.len() as f64;
        let sq: f64 = phi.values.iter().map(|v| v * v).sum();
        let log_density = -0.5 * sq / var - 0.5 * n * (2.0 * std::f64::consts::PI * var).ln();
        let grad = phi.values.iter().map(|v| -v / var).collect();
        (log_density, grad)
    }
}

/// `theta = mu + sigma * eps`, elementwise.
pub fn sample_theta(phi: &PriorParticle, eps: &[f64]) -> Result<FlatParams> {
    if eps.len() != phi.dim() {
        return Err(Error::invalid(format!(
            "noise vector has length {}, particle covers {} parameters",
            eps.len(),
            phi.dim()
        )));
    }
    let mut theta = vec![0.0; phi.dim()];
    sample_theta_into(phi, eps, &mut theta);
    Ok(FlatParams::from_vec_unchecked(theta))
}

pub(crate) fn sample_theta_into(phi: &PriorParticle, eps: &[f64], out: &mut [f64]) {
    for (((o, &m), &ls), &e) in out.iter_mut().zip(phi.mu()).zip(phi.log_sigma()).zip(eps) {
        *o = m + sigma_of(ls) * e;
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Closed-form `KL(q || p)` between two diagonal Gaussians.
pub fn gaussian_kl(q: &PriorParticle, p: &PriorParticle) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!(
            "cannot compare particles of dimension {} and {}",
            q.dim(),
            p.dim()
        )));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq) = (q.mu()[i], q.log_sigma()[i]);
        let (mp, lp) = (p.mu()[i], p.log_sigma()[i]);
        let dm = mq - mp;
        kl += (lp - lq) + ((2.0 * lq).exp() + dm * dm) / (2.0 * (2.0 * lp).exp()) - 0.5;
    }
    Ok(kl.max(0.0))
}
