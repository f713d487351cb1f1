//! PAC-Bayesian meta-learning objective.
//!
//! For a prior particle `phi` and a task `S` with inverse temperature `beta`,
//! the generalized marginal log-likelihood
//!
//! ```text
//! ln Z(S, P_phi) = ln E_{theta ~ P_phi} exp(-beta * loss(theta, S))
//! ```
//!
//! is estimated with `L` reparameterized Monte-Carlo draws
//! `theta_l = mu + sigma * eps_l`:
//!
//! ```text
//! ln Z~ = logsumexp_l(-beta * loss_l) - ln L
//! ```
//!
//! and the score of the PAC-optimal hyper-posterior is
//!
//! ```text
//! grad ln Q*(phi) = grad ln P(phi) + lambda / (lambda + sum_i beta_i) * sum_i grad ln Z~(S_i, phi)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Architecture;
use crate::prob::{
    gaussian_kl, sample_theta_into, sigma_of, standard_normal_vec, HyperPrior, PriorParticle,
};
use crate::task::Task;

pub const DEFAULT_MC_SAMPLES: usize = 5;

/// Inverse temperatures and Monte-Carlo budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureConfig {
    /// Per-task inverse temperature. `None` uses each task's sample count.
    pub beta: Option<f64>,
    pub lambda: f64,
    /// Monte-Carlo draws `L` per (particle, task).
    pub mc_samples: usize,
}

impl TemperatureConfig {
    pub fn new(beta: Option<f64>, lambda: f64, mc_samples: usize) -> Result<Self> {
        let cfg = TemperatureConfig {
            beta,
            lambda,
            mc_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!("beta must be positive, got {b}")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples must be at least 1"));
        }
        Ok(())
    }

    pub fn beta_for(&self, task: &Task) -> f64 {
        self.beta.unwrap_or(task.len() as f64)
    }

    /// `lambda / (lambda + sum_i beta_i)`; equals `lambda / (lambda + n beta)`
    /// for a shared temperature.
    pub fn data_weight(&self, tasks: &[Task]) -> f64 {
        let beta_sum: f64 = tasks.iter().map(|t| self.beta_for(t)).sum();
        self.lambda / (self.lambda + beta_sum)
    }
}

/// Whether the score combines a batch of meta-training tasks or adapts to a
/// single fine-tuning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    MetaTrain,
    /// Exactly one task; the data weight reduces to `lambda / (lambda + beta)`.
    Adaptation,
}

/// Monte-Carlo `ln Z~` for one particle and task, with fresh noise from `rng`.
///
/// Returns the estimate and its reparameterization gradient over the stacked
/// `(mu, log_sigma)` vector.
pub fn log_z_tilde<R: Rng + ?Sized>(
    arch: &Architecture,
    phi: &PriorParticle,
    task: &Task,
    cfg: &TemperatureConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let noise = draw_noise(phi.dim(), cfg.mc_samples, rng);
    log_z_tilde_with_noise(arch, phi, task, cfg.beta_for(task), &noise)
}

/// Draw `count` standard-normal vectors of length `dim`.
pub fn draw_noise<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| standard_normal_vec(dim, rng)).collect()
}

/// `ln Z~` and gradient using caller-supplied noise draws (common random numbers).
pub fn log_z_tilde_with_noise(
    arch: &Architecture,
    phi: &PriorParticle,
    task: &Task,
    beta: f64,
    noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let (value, grad) = log_z_impl(arch, phi, task, beta, noise, true)?;
    Ok((value, grad.expect("gradient requested")))
}

/// Value-only variant of [`log_z_tilde_with_noise`].
pub fn log_z_value_with_noise(
    arch: &Architecture,
    phi: &PriorParticle,
    task: &Task,
    beta: f64,
    noise: &[Vec<f64>],
) -> Result<f64> {
    Ok(log_z_impl(arch, phi, task, beta, noise, false)?.0)
}

fn log_z_impl(
    arch: &Architecture,
    phi: &PriorParticle,
    task: &Task,
    beta: f64,
    noise: &[Vec<f64>],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    phi.check_arch(arch)?;
    task.require_nonempty()?;
    if let Some(j) = task.samples.iter().position(|s| s.x.len() != arch.input_dim) {
        return Err(Error::invalid(format!(
            "sample {j} of domain {} has {} features, network expects {}",
            task.domain_id,
            task.samples[j].x.len(),
            arch.input_dim
        )));
    }
    if noise.is_empty() {
        return Err(Error::invalid("at least one Monte-Carlo draw is required"));
    }
    if let Some(l) = noise.iter().position(|e| e.len() != phi.dim()) {
        return Err(Error::invalid(format!(
            "noise draw {l} has length {}, expected {}",
            noise[l].len(),
            phi.dim()
        )));
    }

    let p = phi.dim();
    let mut theta = vec![0.0; p];
    let mut exponents = Vec::with_capacity(noise.len());
    let mut grads: Vec<Vec<f64>> = Vec::new();
    for (l, eps) in noise.iter().enumerate() {
        sample_theta_into(phi, eps, &mut theta);
        let loss = if want_grad {
            let mut g = vec![0.0; p];
            let loss = arch.loss_grad_raw(&theta, task, &mut g);
            grads.push(g);
            loss
        } else {
            arch.loss_raw(&theta, task)
        };
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss on task from domain {} at Monte-Carlo draw {l}",
                task.domain_id
            )));
        }
        exponents.push(-beta * loss);
    }

    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let value = max + total.ln() - (noise.len() as f64).ln();
    if !(value <= 0.0) {
        return Err(Error::numeric(format!(
            "ln Z estimate {value} is not a finite non-positive number (domain {})",
            task.domain_id
        )));
    }
    if !want_grad {
        return Ok((value, None));
    }

    // d/dmu = -beta sum_l w_l g_l ; d/dlog_sigma = -beta sum_l w_l g_l * eps_l * sigma
    let mut grad = vec![0.0; 2 * p];
    let sigma: Vec<f64> = phi.log_sigma().iter().map(|&l| sigma_of(l)).collect();
    for ((g, eps), w) in grads.iter().zip(noise).zip(&weights) {
        let coef = -beta * w / total;
        if coef == 0.0 {
            continue;
        }
        let (gmu, gls) = grad.split_at_mut(p);
        for i in 0..p {
            gmu[i] += coef * g[i];
            gls[i] += coef * g[i] * eps[i] * sigma[i];
        }
    }
    Ok((value, Some(grad)))
}

fn check_mode(mode: ScoreMode, tasks: &[Task]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("score needs at least one task"));
    }
    if mode == ScoreMode::Adaptation && tasks.len() != 1 {
        return Err(Error::invalid(format!(
            "adaptation score takes exactly one task, got {}",
            tasks.len()
        )));
    }
    Ok(())
}

/// Score `grad ln Q*(phi)` with fresh noise: `mc_samples` draws per task,
/// taken from `rng` in task order.
pub fn hyperposterior_score<R: Rng + ?Sized>(
    arch: &Architecture,
    phi: &PriorParticle,
    tasks: &[Task],
    cfg: &TemperatureConfig,
    hyper: &HyperPrior,
    mode: ScoreMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_mode(mode, tasks)?;
    cfg.validate()?;
    let noise: Vec<Vec<Vec<f64>>> = tasks
        .iter()
        .map(|_| draw_noise(phi.dim(), cfg.mc_samples, rng))
        .collect();
    hyperposterior_score_with_noise(arch, phi, tasks, cfg, hyper, mode, &noise)
}

/// Score with caller-supplied noise; `noise[i]` holds the draws for `tasks[i]`.
pub fn hyperposterior_score_with_noise(
    arch: &Architecture,
    phi: &PriorParticle,
    tasks: &[Task],
    cfg: &TemperatureConfig,
    hyper: &HyperPrior,
    mode: ScoreMode,
    noise: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>> {
    check_mode(mode, tasks)?;
    if noise.len() != tasks.len() {
        return Err(Error::invalid("one noise set per task is required"));
    }
    let weight = cfg.data_weight(tasks);
    let (_, mut score) = hyper.log_density_grad(phi);
    for (task, eps) in tasks.iter().zip(noise) {
        let (_, g) = log_z_tilde_with_noise(arch, phi, task, cfg.beta_for(task), eps)?;
        for (s, gi) in score.iter_mut().zip(&g) {
            *s += weight * gi;
        }
    }
    Ok(score)
}

/// Objective whose gradient is [`hyperposterior_score_with_noise`]:
/// `ln P(phi) + weight * sum_i ln Z~(S_i, phi)`.
pub fn log_hyperposterior_with_noise(
    arch: &Architecture,
    phi: &PriorParticle,
    tasks: &[Task],
    cfg: &TemperatureConfig,
    hyper: &HyperPrior,
    noise: &[Vec<Vec<f64>>],
) -> Result<f64> {
    let weight = cfg.data_weight(tasks);
    let (mut total, _) = hyper.log_density_grad(phi);
    for (task, eps) in tasks.iter().zip(noise) {
        total += weight * log_z_value_with_noise(arch, phi, task, cfg.beta_for(task), eps)?;
    }
    Ok(total)
}

/// Generalization-bound diagnostics (the bound's constant term is not reported).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `-(1/n) sum_i (1/beta_i) mean_k ln Z~(S_i, P_k)`.
    pub empirical: f64,
    /// `(1/lambda + 1/(n beta))` with `beta` the mean task temperature.
    pub kl_coefficient: f64,
    /// Mean particle KL against the hyper-prior mode.
    pub mean_kl: f64,
    /// `kl_coefficient * mean_kl`.
    pub kl_term: f64,
}

/// Bound terms over a particle set.
///
/// The KL term uses each particle's Gaussian against the hyper-prior mode
/// (`mu = 0`, `log_sigma = 0`), averaged over particles.
pub fn bound_terms<R: Rng + ?Sized>(
    arch: &Architecture,
    particles: &[PriorParticle],
    tasks: &[Task],
    cfg: &TemperatureConfig,
    rng: &mut R,
) -> Result<BoundTerms> {
    if particles.is_empty() {
        return Err(Error::invalid("bound terms need at least one particle"));
    }
    if tasks.is_empty() {
        return Err(Error::invalid("bound terms need at least one task"));
    }
    cfg.validate()?;
    let n = tasks.len() as f64;
    let k = particles.len() as f64;
    let mut empirical = 0.0;
    for task in tasks {
        let beta = cfg.beta_for(task);
        let mut mean_log_z = 0.0;
        for phi in particles {
            let noise = draw_noise(phi.dim(), cfg.mc_samples, rng);
            mean_log_z += log_z_value_with_noise(arch, phi, task, beta, &noise)? / k;
        }
        empirical -= mean_log_z / (beta * n);
    }
    let mean_beta = tasks.iter().map(|t| cfg.beta_for(t)).sum::<f64>() / n;
    let kl_coefficient = kl_coefficient(cfg.lambda, tasks.len(), mean_beta);
    let reference = PriorParticle::new(vec![0.0; particles[0].dim()], vec![0.0; particles[0].dim()])?;
    let mut mean_kl = 0.0;
    for phi in particles {
        mean_kl += gaussian_kl(phi, &reference)? / k;
    }
    Ok(BoundTerms {
        empirical,
        kl_coefficient,
        mean_kl,
        kl_term: kl_coefficient * mean_kl,
    })
}

/// `1/lambda + 1/(n beta)`.
pub fn kl_coefficient(lambda: f64, n: usize, beta: f64) -> f64 {
    1.0 / lambda + 1.0 / (n as f64 * beta)
}
