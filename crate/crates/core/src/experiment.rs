//! Leave-one-environment-out experiments comparing BOML with the baselines.
//!
//! Each rotation holds out one environment, meta-trains on tasks from the
//! others, fine-tunes on `finetune_size` samples of the held-out environment
//! and scores every checkpoint on `test_size` further samples.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, MamlConfig};
use crate::envsim::{self, EnvironmentSuite};
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, MetricsRow, Phase, TemperatureRecord};
use crate::net::{Architecture, DEFAULT_HIDDEN};
use crate::pipeline::{self, FineTuneConfig, MetaConfig, Probe};
use crate::prob::PriorParticle;
use crate::rng::{self, stream};
use crate::svgd::{ParticleSet, StepRule};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Boml,
    Maml,
    Randinit,
    Knn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Boml, Method::Maml, Method::Randinit, Method::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Boml => "boml",
            Method::Maml => "maml",
            Method::Randinit => "randinit",
            Method::Knn => "knn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?} (expected boml, maml, randinit or knn)")))
    }
}

/// Every knob of an experiment. Per-rotation seeds are derived from `seed`,
/// so the `seed` fields of the nested configs are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training environments in a generated suite (one more is added).
    pub d_train: usize,
    pub los: bool,
    pub hidden_dims: Vec<usize>,
    /// Training tasks per rotation.
    pub n_tasks: usize,
    pub task_size: usize,
    pub finetune_size: usize,
    pub test_size: usize,
    pub n_networks: usize,
    pub knn_k: usize,
    pub methods: Vec<Method>,
    pub meta: MetaConfig,
    /// `beta`, `lambda`, `mc_samples` and `sigma_p` are taken from `meta`.
    pub finetune: FineTuneConfig,
    /// Point-network fine-tuning uses `maml.inner_lr`.
    pub maml: MamlConfig,
    /// Record elapsed milliseconds; off by default so output is byte-stable.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            d_train: 4,
            los: true,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            n_tasks: 100,
            task_size: envsim::TRAIN_TASK_SIZE,
            finetune_size: envsim::FINETUNE_SIZE,
            test_size: envsim::TEST_SIZE,
            n_networks: pipeline::DEFAULT_N_NETWORKS,
            knn_k: 3,
            methods: Method::ALL.to_vec(),
            meta: MetaConfig::default(),
            finetune: FineTuneConfig::default(),
            maml: MamlConfig::default(),
            record_wall_time: false,
        }
    }
}

/// Data of one rotation: training tasks from the other environments plus the
/// held-out environment's fine-tuning and test sets.
#[derive(Debug, Clone)]
pub struct RotationData {
    pub rotation: usize,
    pub train_envs: Vec<usize>,
    pub train_tasks: Vec<Task>,
    pub s0: Task,
    pub s_test: Task,
}

/// Results of one rotation. `curves` maps a method to its fine-tuning error
/// curve (one value per checkpoint).
#[derive(Debug, Clone)]
pub struct RotationOutcome {
    pub rows: Vec<MetricsRow>,
    pub boml_meta: Option<ParticleSet>,
    pub curves: BTreeMap<&'static str, Vec<f64>>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.maml.validate()?;
        if self.n_tasks == 0 {
            return Err(Error::config("n_tasks must be positive"));
        }
        if self.task_size == 0 || self.finetune_size == 0 || self.test_size == 0 {
            return Err(Error::config("task sizes must be positive"));
        }
        if self.n_networks == 0 {
            return Err(Error::config("n_networks must be positive"));
        }
        if self.knn_k == 0 || self.knn_k > self.finetune_size {
            return Err(Error::config("knn_k must lie in 1..=finetune_size"));
        }
        if self.finetune.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        if !(self.finetune.eta > 0.0) {
            return Err(Error::config("fine-tuning learning rate must be positive"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        Ok(())
    }

    pub fn arch(&self, input_dim: usize) -> Result<Architecture> {
        Architecture::new(input_dim, self.hidden_dims.clone())
    }

    pub fn build_suite(&self) -> Result<EnvironmentSuite> {
        envsim::make_suite(self.d_train, self.seed, self.los)
    }

    pub fn rotation_seed(&self, rotation: usize) -> u64 {
        rng::derive_seed(self.seed, stream::ROTATION, rotation as u64)
    }

    /// Seed of the ensemble draws used for every evaluation in a rotation.
    pub fn eval_seed(&self, rotation: usize) -> u64 {
        rng::derive_seed(self.rotation_seed(rotation), stream::EVALUATE, 0)
    }

    /// Effective lambda: the configured value or the training-task count.
    pub fn lambda(&self) -> f64 {
        self.meta.lambda.unwrap_or(self.n_tasks as f64)
    }

    /// Meta-training settings for a rotation with derived seed `seed`.
    pub fn meta_for(&self, seed: u64) -> MetaConfig {
        MetaConfig {
            seed,
            lambda: Some(self.lambda()),
            ..self.meta.clone()
        }
    }

    /// Fine-tuning settings for a rotation with derived seed `seed`.
    pub fn finetune_for(&self, seed: u64) -> FineTuneConfig {
        FineTuneConfig {
            beta: self.meta.beta,
            lambda: self.lambda(),
            mc_samples: self.meta.mc_samples,
            sigma_p: self.meta.sigma_p,
            seed,
            ..self.finetune.clone()
        }
    }

    /// Every effective setting as `key = value` pairs.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("d_train", self.d_train.to_string()),
            ("los", self.los.to_string()),
            ("hidden", list(&self.hidden_dims)),
            ("n_tasks", self.n_tasks.to_string()),
            ("task_size", self.task_size.to_string()),
            ("finetune_size", self.finetune_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("n_networks", self.n_networks.to_string()),
            ("knn_k", self.knn_k.to_string()),
            (
                "methods",
                self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
            ),
            ("n_tasks_per_iter", self.meta.n_tasks_per_iter.to_string()),
            ("iters", self.meta.max_iters.to_string()),
            ("lr", self.meta.eta.to_string()),
            ("lr_decay", self.meta.eta_decay.to_string()),
            ("step_rule", step_rule_name(self.meta.step_rule).to_string()),
            ("particles", self.meta.particles.to_string()),
            ("mc_samples", self.meta.mc_samples.to_string()),
            ("beta", opt(self.meta.beta)),
            ("lambda", opt(self.meta.lambda)),
            ("sigma_p", self.meta.sigma_p.to_string()),
            ("early_stop_window", self.meta.early_stop_window.to_string()),
            ("eval_every", self.meta.eval_every.to_string()),
            ("finetune_steps", self.finetune.steps.to_string()),
            ("finetune_lr", self.finetune.eta.to_string()),
            ("finetune_step_rule", step_rule_name(self.finetune.step_rule).to_string()),
            ("checkpoint_every", self.finetune.checkpoint_every.to_string()),
            ("maml_inner_lr", self.maml.inner_lr.to_string()),
            ("maml_inner_steps", self.maml.inner_steps.to_string()),
            ("maml_meta_lr", self.maml.meta_lr.to_string()),
            ("maml_meta_iters", self.maml.meta_iters.to_string()),
            ("maml_tasks_per_iter", self.maml.tasks_per_iter.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Override settings from `key = value` pairs; unknown keys are rejected.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "d_train" => self.d_train = parse(key, v)?,
            "los" => self.los = parse(key, v)?,
            "hidden" => {
                self.hidden_dims = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?
                }
            }
            "n_tasks" => self.n_tasks = parse(key, v)?,
            "task_size" => self.task_size = parse(key, v)?,
            "finetune_size" => self.finetune_size = parse(key, v)?,
            "test_size" => self.test_size = parse(key, v)?,
            "n_networks" => self.n_networks = parse(key, v)?,
            "knn_k" => self.knn_k = parse(key, v)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(|s| Method::parse(s.trim()))
                    .collect::<Result<_>>()?
            }
            "n_tasks_per_iter" => self.meta.n_tasks_per_iter = parse(key, v)?,
            "iters" => self.meta.max_iters = parse(key, v)?,
            "lr" => self.meta.eta = parse(key, v)?,
            "lr_decay" => self.meta.eta_decay = parse(key, v)?,
            "step_rule" => self.meta.step_rule = parse_step_rule(v)?,
            "particles" => self.meta.particles = parse(key, v)?,
            "mc_samples" => self.meta.mc_samples = parse(key, v)?,
            "beta" => self.meta.beta = parse_auto(key, v)?,
            "lambda" => self.meta.lambda = parse_auto(key, v)?,
            "sigma_p" => self.meta.sigma_p = parse(key, v)?,
            "early_stop_window" => self.meta.early_stop_window = parse(key, v)?,
            "eval_every" => self.meta.eval_every = parse(key, v)?,
            "finetune_steps" => self.finetune.steps = parse(key, v)?,
            "finetune_lr" => self.finetune.eta = parse(key, v)?,
            "finetune_step_rule" => self.finetune.step_rule = parse_step_rule(v)?,
            "checkpoint_every" => self.finetune.checkpoint_every = parse(key, v)?,
            "maml_inner_lr" => self.maml.inner_lr = parse(key, v)?,
            "maml_inner_steps" => self.maml.inner_steps = parse(key, v)?,
            "maml_meta_lr" => self.maml.meta_lr = parse(key, v)?,
            "maml_meta_iters" => self.maml.meta_iters = parse(key, v)?,
            "maml_tasks_per_iter" => self.maml.tasks_per_iter = parse(key, v)?,
            "record_wall_time" => self.record_wall_time = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("cannot parse {key} = {v:?}")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn step_rule_name(r: StepRule) -> &'static str {
    match r {
        StepRule::Plain => "plain",
        StepRule::Adam => "adam",
    }
}

fn parse_step_rule(v: &str) -> Result<StepRule> {
    match v {
        "plain" => Ok(StepRule::Plain),
        "adam" => Ok(StepRule::Adam),
        _ => Err(Error::config(format!("unknown step rule {v:?} (expected plain or adam)"))),
    }
}

/// Build the tasks of one rotation.
pub fn rotation_data(cfg: &ExperimentConfig, suite: &EnvironmentSuite, rotation: usize) -> Result<RotationData> {
    let n_env = suite.environments.len();
    if n_env < 2 {
        return Err(Error::config("an experiment needs at least two environments"));
    }
    if rotation >= n_env {
        return Err(Error::config(format!("rotation {rotation} out of range for {n_env} environments")));
    }
    let seed = cfg.rotation_seed(rotation);
    let train_envs: Vec<usize> = (0..n_env).filter(|&e| e != rotation).collect();
    let train_tasks = suite.sample_tasks(&train_envs, cfg.n_tasks, cfg.task_size, seed)?;
    let mut r = rng::rng_for(seed, stream::ROTATION, 0);
    let held_out = suite.sample_task(rotation, cfg.finetune_size + cfg.test_size, &mut r)?;
    let (s0, s_test) = held_out.split_at(cfg.finetune_size);
    Ok(RotationData {
        rotation,
        train_envs,
        train_tasks,
        s0,
        s_test,
    })
}

/// Run every configured method on one rotation. Checkpoints go to
/// `out_dir/rotation_<r>/` when `out_dir` is given.
pub fn run_rotation(
    cfg: &ExperimentConfig,
    suite: &EnvironmentSuite,
    rotation: usize,
    out_dir: Option<&Path>,
) -> Result<RotationOutcome> {
    cfg.validate()?;
    suite.validate()?;
    let data = rotation_data(cfg, suite, rotation)?;
    let ckpt_dir = out_dir.map(|d| d.join(format!("rotation_{rotation}")));
    let probe = if cfg.meta.early_stop_window > 0 && cfg.methods.contains(&Method::Boml) {
        let ft = cfg.finetune_for(cfg.rotation_seed(rotation));
        Some(make_probe(cfg, suite, &data, &ft, cfg.rotation_seed(rotation))?)
    } else {
        None
    };
    run_on_data(cfg, &data, probe.as_ref(), ckpt_dir.as_deref())
}

/// Run every configured method on prepared rotation data, writing
/// checkpoints into `ckpt_dir` when given.
pub fn run_on_data(
    cfg: &ExperimentConfig,
    data: &RotationData,
    probe: Option<&Probe>,
    ckpt_dir: Option<&Path>,
) -> Result<RotationOutcome> {
    cfg.validate()?;
    let input_dim = data
        .s0
        .feature_dim()
        .ok_or_else(|| Error::invalid("fine-tuning set is empty"))?;
    let arch = cfg.arch(input_dim)?;
    let rotation = data.rotation;
    let seed = cfg.rotation_seed(rotation);
    let meta = cfg.meta_for(seed);
    let ft = cfg.finetune_for(seed);
    let temp = meta.temperature(data.train_tasks.len())?;
    let eval_seed = cfg.eval_seed(rotation);
    let clock = Instant::now();
    let wall = || {
        if cfg.record_wall_time {
            clock.elapsed().as_millis() as u64
        } else {
            0
        }
    };
    let save = |name: &str, set: &ParticleSet| -> Result<()> {
        if let Some(dir) = ckpt_dir {
            let c = Checkpoint::new(&arch, set, TemperatureRecord::from(&temp), seed);
            io::save_checkpoint(&dir.join(format!("{name}.json")), &c)?;
        }
        Ok(())
    };

    let mut rows = Vec::new();
    let mut curves = BTreeMap::new();
    let mut boml_meta = None;
    for &method in &cfg.methods {
        let row = |phase, step, report: Option<&pipeline::EvalReport>, bound: Option<&crate::pacoh::BoundTerms>| {
            MetricsRow {
                method: method.name().to_string(),
                rotation,
                phase,
                step,
                mean_error_m: report.map(|r| r.mean_error),
                std_error_m: report.map(|r| r.std_error),
                mean_uncertainty_m: report.map(|r| r.mean_uncertainty),
                bound_emp_term: bound.map(|b| b.empirical),
                bound_kl_term: bound.map(|b| b.kl_term),
                wall_ms: wall(),
            }
        };
        let mut curve = Vec::new();
        match method {
            Method::Boml | Method::Randinit => {
                let start = if method == Method::Boml {
                    let out = pipeline::meta_train_with(&arch, &meta, &data.train_tasks, probe, |p| {
                        rows.push(row(Phase::Meta, p.step, p.report.as_ref(), p.bound.as_ref()));
                        Ok(())
                    })?;
                    save("boml_meta", &out.particles)?;
                    boml_meta = Some(out.particles.clone());
                    out.particles
                } else {
                    let init_seed = rng::derive_seed(seed, stream::HYPER_PRIOR, 1);
                    pipeline::init_particles(&arch, meta.particles, meta.sigma_p, init_seed)?
                };
                let s0 = std::slice::from_ref(&data.s0);
                let tuned = pipeline::fine_tune_with(&arch, &start, &data.s0, &ft, |step, set| {
                    let report = pipeline::evaluate(&arch, set, &data.s_test, cfg.n_networks, eval_seed)?;
                    let mut r = rng::rng_for(seed, stream::MONTE_CARLO, u64::MAX / 2 + step as u64);
                    let bound = crate::pacoh::bound_terms(&arch, &set.particles, s0, &ft.temperature()?, &mut r)?;
                    curve.push(report.mean_error);
                    rows.push(row(Phase::Finetune, step, Some(&report), Some(&bound)));
                    Ok(())
                })?;
                save(&format!("{}_finetuned", method.name()), &tuned)?;
            }
            Method::Maml => {
                let mc = MamlConfig { seed, ..cfg.maml.clone() };
                let theta0 = baselines::maml_meta_train(&mc, &data.train_tasks, &arch)?;
                save("maml_meta", &point_set(&theta0))?;
                let tuned = baselines::finetune_point_with(
                    &arch,
                    &theta0,
                    &data.s0,
                    ft.steps,
                    mc.inner_lr,
                    ft.checkpoint_every,
                    |step, theta| {
                        let report = baselines::evaluate_point(&arch, theta, &data.s_test)?;
                        curve.push(report.mean_error);
                        rows.push(row(Phase::Finetune, step, Some(&report), None));
                        Ok(())
                    },
                )?;
                save("maml_finetuned", &point_set(&tuned))?;
            }
            Method::Knn => {
                let report = baselines::evaluate_knn(&data.s0, &data.s_test, cfg.knn_k)?;
                curve.push(report.mean_error);
                rows.push(row(Phase::Finetune, 0, Some(&report), None));
            }
        }
        curves.insert(method.name(), curve);
    }
    // Stable sort keeps the configured method order within equal keys.
    rows.sort_by_key(|r| (r.phase, r.step));
    Ok(RotationOutcome {
        rows,
        boml_meta,
        curves,
    })
}

fn point_set(theta: &crate::net::FlatParams) -> ParticleSet {
    ParticleSet {
        particles: vec![PriorParticle::point_mass(theta.as_slice().to_vec())],
        step_count: 0,
    }
}

/// Early-stopping probe drawn from the last training environment, never from
/// the held-out one.
fn make_probe(
    cfg: &ExperimentConfig,
    suite: &EnvironmentSuite,
    data: &RotationData,
    ft: &FineTuneConfig,
    seed: u64,
) -> Result<Probe> {
    let env = *data.train_envs.last().expect("at least one training environment");
    let mut r = rng::rng_for(seed, stream::PROBE, 0);
    let task = suite.sample_task(env, cfg.finetune_size + cfg.test_size, &mut r)?;
    let (s0, s_test) = task.split_at(cfg.finetune_size);
    Ok(Probe {
        s0,
        s_test,
        finetune: ft.clone(),
        n_networks: cfg.n_networks,
    })
}

/// Run all rotations, writing `metrics.csv` and per-rotation checkpoints
/// into `out_dir`. Returns the rows in file order.
pub fn run_experiment(cfg: &ExperimentConfig, suite: &EnvironmentSuite, out_dir: &Path) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if suite.environments.len() < 2 {
        return Err(Error::config("an experiment needs at least two environments"));
    }
    let mut rows = Vec::new();
    for rotation in 0..suite.environments.len() {
        rows.extend(run_rotation(cfg, suite, rotation, Some(out_dir))?.rows);
    }
    io::write_metrics(&out_dir.join("metrics.csv"), &rows)?;
    Ok(rows)
}
