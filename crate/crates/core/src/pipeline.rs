//! Meta-training, fine-tuning and ensemble evaluation.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Architecture;
use crate::pacoh::{self, BoundTerms, ScoreMode, TemperatureConfig};
use crate::prob::{sample_theta_into, HyperPrior, PriorParticle};
use crate::rng::{self, stream};
use crate::svgd::{ParticleSet, StepRule, SvgdOptimizer};
use crate::task::Task;

pub const DEFAULT_PARTICLES: usize = 5;
pub const DEFAULT_META_ITERS: usize = 2000;
pub const DEFAULT_N_NETWORKS: usize = 10;
pub const DEFAULT_FINETUNE_STEPS: usize = 200;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 10;

/// Hyper-posterior training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Tasks per SVGD iteration (`n`).
    pub n_tasks_per_iter: usize,
    pub max_iters: usize,
    pub eta: f64,
    /// Multiplicative step-size decay per iteration; 1 disables.
    pub eta_decay: f64,
    pub step_rule: StepRule,
    /// Number of prior particles `K`.
    pub particles: usize,
    /// Monte-Carlo draws `L` per (particle, task).
    pub mc_samples: usize,
    /// Inverse temperature; `None` uses each task's sample count.
    pub beta: Option<f64>,
    /// `None` uses the number of available training tasks.
    pub lambda: Option<f64>,
    pub sigma_p: f64,
    pub seed: u64,
    /// Probe evaluations without improvement before stopping; 0 disables.
    pub early_stop_window: usize,
    /// Iterations between curve points / probe evaluations.
    pub eval_every: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            n_tasks_per_iter: 5,
            max_iters: DEFAULT_META_ITERS,
            eta: crate::svgd::DEFAULT_ETA,
            eta_decay: 1.0,
            step_rule: StepRule::Plain,
            particles: DEFAULT_PARTICLES,
            mc_samples: pacoh::DEFAULT_MC_SAMPLES,
            beta: None,
            lambda: None,
            sigma_p: crate::prob::DEFAULT_SIGMA_P,
            seed: 0,
            early_stop_window: 0,
            eval_every: 50,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks_per_iter == 0 {
            return Err(Error::config("n_tasks_per_iter must be positive"));
        }
        if self.particles == 0 {
            return Err(Error::config("particle count must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::config("lambda must be positive"));
            }
        }
        HyperPrior::new(self.sigma_p)?;
        SvgdOptimizer::new(self.step_rule, self.eta, self.eta_decay)?;
        TemperatureConfig::new(self.beta, 1.0, self.mc_samples)?;
        Ok(())
    }

    pub fn temperature(&self, n_available_tasks: usize) -> Result<TemperatureConfig> {
        TemperatureConfig::new(
            self.beta,
            self.lambda.unwrap_or(n_available_tasks.max(1) as f64),
            self.mc_samples,
        )
    }
}

/// Fine-tuning settings for a new environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub eta: f64,
    pub step_rule: StepRule,
    pub mc_samples: usize,
    pub beta: Option<f64>,
    /// Must be set; the experiment runner copies the meta-training value.
    pub lambda: f64,
    pub sigma_p: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: DEFAULT_FINETUNE_STEPS,
            eta: crate::svgd::DEFAULT_ETA,
            step_rule: StepRule::Plain,
            mc_samples: pacoh::DEFAULT_MC_SAMPLES,
            beta: None,
            lambda: 100.0,
            sigma_p: crate::prob::DEFAULT_SIGMA_P,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn temperature(&self) -> Result<TemperatureConfig> {
        TemperatureConfig::new(self.beta, self.lambda, self.mc_samples)
    }

    /// `lambda / (lambda + beta)` for a fine-tuning set of `m` samples.
    pub fn adaptation_weight(&self, m: usize) -> f64 {
        let beta = self.beta.unwrap_or(m as f64);
        self.lambda / (self.lambda + beta)
    }
}

/// Ensemble localization result on a test set. Distances are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_point_error: Vec<f64>,
    pub mean_error: f64,
    /// Population std of `per_point_error`.
    pub std_error: f64,
    pub per_point_uncertainty: Vec<f64>,
    pub mean_uncertainty: f64,
    /// Networks per point, `K * N`.
    pub n_networks: usize,
}

/// Predictions `[particle][network][point]`.
pub type PredictionTable = Vec<Vec<Vec<[f64; 2]>>>;

/// Sample `n` networks per particle and predict every test point.
///
/// Noise for particle `k` comes from its own stream derived from `seed`.
pub fn prediction_table(
    arch: &Architecture,
    set: &ParticleSet,
    s_test: &Task,
    n: usize,
    seed: u64,
) -> Result<PredictionTable> {
    if n < 1 {
        return Err(Error::invalid("at least one network per particle is required"));
    }
    s_test.require_nonempty()?;
    set.validate()?;
    for p in &set.particles {
        p.check_arch(arch)?;
    }
    if let Some(j) = s_test.samples.iter().position(|s| s.x.len() != arch.input_dim) {
        return Err(Error::invalid(format!("test sample {j} has the wrong feature length")));
    }
    let dim = arch.param_count();
    let mut theta = vec![0.0; dim];
    set.particles
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            let mut r = rng::rng_for(seed, stream::EVALUATE, k as u64);
            (0..n)
                .map(|_| {
                    let eps = crate::prob::standard_normal_vec(dim, &mut r);
                    sample_theta_into(phi, &eps, &mut theta);
                    let preds: Vec<[f64; 2]> = s_test
                        .samples
                        .iter()
                        .map(|s| arch.forward_raw(&theta, &s.x))
                        .collect();
                    if preds.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::numeric(format!(
                            "non-finite prediction from particle {k}"
                        )));
                    }
                    Ok(preds)
                })
                .collect()
        })
        .collect()
}

/// Reduce a prediction table to an [`EvalReport`].
///
/// `error_m = (1/K) sum_i (1/N) sum_j |f_ij(x_m) - y_m|`; the uncertainty is
/// the RMS distance of the `K * N` predictions from their ensemble mean.
pub fn report_from_table(table: &PredictionTable, s_test: &Task) -> EvalReport {
    let k = table.len();
    let n = table[0].len();
    let m = s_test.len();
    let mut per_point_error = Vec::with_capacity(m);
    let mut per_point_uncertainty = Vec::with_capacity(m);
    for (pt, sample) in s_test.samples.iter().enumerate() {
        let mut err = 0.0;
        for particle in table {
            let mut inner = 0.0;
            for net in particle {
                inner += dist(net[pt], sample.y);
            }
            err += inner / n as f64;
        }
        per_point_error.push(err / k as f64);

        // Mean as an offset from the first prediction so identical
        // predictions give an exactly zero spread.
        let origin = table[0][0][pt];
        let count = (k * n) as f64;
        let mut off = [0.0, 0.0];
        for net in table.iter().flatten() {
            off[0] += net[pt][0] - origin[0];
            off[1] += net[pt][1] - origin[1];
        }
        let mean = [origin[0] + off[0] / count, origin[1] + off[1] / count];
        let ms: f64 = table
            .iter()
            .flatten()
            .map(|net| {
                let d = dist(net[pt], mean);
                d * d
            })
            .sum::<f64>()
            / count;
        per_point_uncertainty.push(ms.sqrt());
    }
    let mean_error = mean(&per_point_error);
    let std_error = (per_point_error
        .iter()
        .map(|e| (e - mean_error).powi(2))
        .sum::<f64>()
        / m as f64)
        .sqrt();
    let mean_uncertainty = mean(&per_point_uncertainty);
    EvalReport {
        per_point_error,
        mean_error,
        std_error,
        per_point_uncertainty,
        mean_uncertainty,
        n_networks: k * n,
    }
}

/// Ensemble localization error and uncertainty; never mutates `set`.
pub fn evaluate(
    arch: &Architecture,
    set: &ParticleSet,
    s_test: &Task,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    let table = prediction_table(arch, set, s_test, n, seed)?;
    Ok(report_from_table(&table, s_test))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One point of a training or fine-tuning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub report: Option<EvalReport>,
    pub bound: Option<BoundTerms>,
}

/// Held-out data used to watch meta-training progress.
#[derive(Debug, Clone)]
pub struct Probe {
    pub s0: Task,
    pub s_test: Task,
    pub finetune: FineTuneConfig,
    pub n_networks: usize,
}

impl Probe {
    fn error(&self, arch: &Architecture, set: &ParticleSet) -> Result<EvalReport> {
        let tuned = fine_tune(arch, set, &self.s0, &self.finetune)?;
        evaluate(arch, &tuned, &self.s_test, self.n_networks, self.finetune.seed)
    }
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub particles: ParticleSet,
    pub curve: Vec<CurvePoint>,
    pub iterations: usize,
    pub stopped_early: bool,
}

/// Fresh particles from the hyper-prior.
pub fn init_particles(arch: &Architecture, k: usize, sigma_p: f64, seed: u64) -> Result<ParticleSet> {
    let hyper = HyperPrior::new(sigma_p)?;
    let mut r = rng::rng_for(seed, stream::HYPER_PRIOR, 0);
    let particles = (0..k)
        .map(|_| hyper.sample_particle(arch.param_count(), &mut r))
        .collect();
    ParticleSet::new(particles)
}

/// Run SVGD on the hyper-posterior defined by `tasks`.
pub fn meta_train(arch: &Architecture, cfg: &MetaConfig, tasks: &[Task]) -> Result<ParticleSet> {
    Ok(meta_train_with(arch, cfg, tasks, None, |_| Ok(()))?.particles)
}

/// [`meta_train`] with an optional early-stopping probe and a per-curve-point
/// callback (called every `eval_every` iterations and after the last one).
pub fn meta_train_with<F>(
    arch: &Architecture,
    cfg: &MetaConfig,
    tasks: &[Task],
    probe: Option<&Probe>,
    mut on_point: F,
) -> Result<MetaTrainOutcome>
where
    F: FnMut(&CurvePoint) -> Result<()>,
{
    cfg.validate()?;
    arch.validate()?;
    if tasks.is_empty() {
        return Err(Error::config("no training tasks available"));
    }
    for t in tasks {
        t.require_nonempty()?;
    }
    let temp = cfg.temperature(tasks.len())?;
    let hyper = HyperPrior::new(cfg.sigma_p)?;
    let mut set = init_particles(arch, cfg.particles, cfg.sigma_p, cfg.seed)?;
    let mut opt = SvgdOptimizer::new(cfg.step_rule, cfg.eta, cfg.eta_decay)?;
    let mut task_rng = rng::rng_for(cfg.seed, stream::TASK_SAMPLING, 0);
    let n = cfg.n_tasks_per_iter.min(tasks.len());

    let mut curve = Vec::new();
    let mut probe_errors: Vec<f64> = Vec::new();
    let mut best_avg = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut iter = 0;
    let mut batch: Vec<Task> = Vec::new();

    while iter < cfg.max_iters {
        batch.clear();
        batch.extend(index::sample(&mut task_rng, tasks.len(), n).into_iter().map(|i| tasks[i].clone()));
        let scores = set
            .particles
            .iter()
            .enumerate()
            .map(|(k, phi)| {
                let mut r = rng::rng_for(
                    cfg.seed,
                    stream::MONTE_CARLO,
                    (iter * cfg.particles + k) as u64,
                );
                pacoh::hyperposterior_score(arch, phi, &batch, &temp, &hyper, ScoreMode::MetaTrain, &mut r)
                    .map_err(|e| with_particle(e, k))
            })
            .collect::<Result<Vec<_>>>()?;
        set = opt.step(&set, &scores)?;
        iter += 1;

        if iter % cfg.eval_every == 0 || iter == cfg.max_iters {
            let mut bound_rng = rng::rng_for(cfg.seed, stream::MONTE_CARLO, u64::MAX - iter as u64);
            let bound = pacoh::bound_terms(arch, &set.particles, &batch, &temp, &mut bound_rng)?;
            let report = match probe {
                Some(p) => Some(p.error(arch, &set)?),
                None => None,
            };
            let point = CurvePoint {
                step: iter,
                report,
                bound: Some(bound),
            };
            on_point(&point)?;
            if let (Some(r), true) = (&point.report, cfg.early_stop_window > 0) {
                probe_errors.push(r.mean_error);
                let w = cfg.early_stop_window;
                if probe_errors.len() >= w {
                    let avg = mean(&probe_errors[probe_errors.len() - w..]);
                    if avg < best_avg {
                        best_avg = avg;
                        since_best = 0;
                    } else {
                        since_best += 1;
                    }
                }
            }
            curve.push(point);
            if cfg.early_stop_window > 0 && since_best >= cfg.early_stop_window {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(MetaTrainOutcome {
        particles: set,
        curve,
        iterations: iter,
        stopped_early,
    })
}

fn with_particle(e: Error, k: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("particle {k}: {msg}")),
        other => other,
    }
}

/// Adapt particles to a new environment's fine-tuning set.
pub fn fine_tune(arch: &Architecture, set: &ParticleSet, s0: &Task, cfg: &FineTuneConfig) -> Result<ParticleSet> {
    fine_tune_with(arch, set, s0, cfg, |_, _| Ok(()))
}

/// [`fine_tune`] calling `on_checkpoint(step, particles)` at step 0 and every
/// `checkpoint_every` steps (and after the final step).
pub fn fine_tune_with<F>(
    arch: &Architecture,
    set: &ParticleSet,
    s0: &Task,
    cfg: &FineTuneConfig,
    mut on_checkpoint: F,
) -> Result<ParticleSet>
where
    F: FnMut(usize, &ParticleSet) -> Result<()>,
{
    s0.require_nonempty()?;
    set.validate()?;
    if cfg.checkpoint_every == 0 {
        return Err(Error::config("checkpoint_every must be positive"));
    }
    let temp = cfg.temperature()?;
    let hyper = HyperPrior::new(cfg.sigma_p)?;
    let mut opt = SvgdOptimizer::new(cfg.step_rule, cfg.eta, 1.0)?;
    let tasks = std::slice::from_ref(s0);
    let mut cur = set.clone();
    on_checkpoint(0, &cur)?;
    for step in 0..cfg.steps {
        let scores = cur
            .particles
            .iter()
            .enumerate()
            .map(|(k, phi)| {
                let mut r = rng::rng_for(
                    cfg.seed,
                    stream::FINE_TUNE,
                    (step * cur.len() + k) as u64,
                );
                pacoh::hyperposterior_score(arch, phi, tasks, &temp, &hyper, ScoreMode::Adaptation, &mut r)
                    .map_err(|e| with_particle(e, k))
            })
            .collect::<Result<Vec<_>>>()?;
        cur = opt.step(&cur, &scores)?;
        let done = step + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.steps {
            on_checkpoint(done, &cur)?;
        }
    }
    Ok(cur)
}

/// Particle means only, as point-mass priors (used by diagnostics).
pub fn collapse_to_means(set: &ParticleSet) -> ParticleSet {
    ParticleSet {
        particles: set
            .particles
            .iter()
            .map(|p| PriorParticle::point_mass(p.mu().to_vec()))
            .collect(),
        step_count: set.step_count,
    }
}
