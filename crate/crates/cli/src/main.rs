//! `bomlloc` command-line interface.
//!
//! Settings resolve as: built-in defaults, then the `--config` file, then
//! command-line flags. Every command writes the resolved settings to
//! `<out>/config.txt`, which can be fed back through `--config` to repeat a
//! run exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bomlloc_core::envsim::EnvironmentSuite;
use bomlloc_core::experiment::{self, ExperimentConfig, Method, RotationData};
use bomlloc_core::io::{self, Checkpoint, MetricsRow, Phase, TemperatureRecord};
use bomlloc_core::pipeline;
use bomlloc_core::{Error, Result, Task};

#[derive(Parser)]
#[command(name = "bomlloc", version, about = "Bayesian meta-learning for few-shot indoor localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment suite and the train/fine-tune/test datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Meta-train prior particles and save them as a checkpoint.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fine-tune a checkpoint on the new environment's fine-tuning set.
    FineTune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, required = true)]
        checkpoint: PathBuf,
        /// Fine-tuning steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Ensemble error and uncertainty of a checkpoint on the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, required = true)]
        checkpoint: PathBuf,
    },
    /// Run one comparison method on the held-out environment.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        method: BaselineMethod,
    },
    /// Full leave-one-environment-out comparison of all methods.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Suite descriptor; generated from the settings when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Maml,
    Randinit,
    Knn,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prior particles K [default: 5].
    #[arg(long)]
    particles: Option<usize>,
    /// Monte-Carlo draws L [default: 5].
    #[arg(long)]
    mc_samples: Option<usize>,
    /// SVGD step size for meta-training and fine-tuning [default: 0.002].
    #[arg(long)]
    lr: Option<f64>,
    /// Networks sampled per particle at evaluation, N [default: 10].
    #[arg(long)]
    n_networks: Option<usize>,
    /// Inverse temperature [default: task sample count].
    #[arg(long)]
    beta: Option<f64>,
    /// [default: number of training tasks].
    #[arg(long)]
    lambda: Option<f64>,
    /// Meta-training iterations [default: 2000].
    #[arg(long)]
    iters: Option<usize>,
    /// Training tasks [default: 100].
    #[arg(long)]
    n_tasks: Option<usize>,
    /// Any other setting, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Dataset files; anything omitted is generated from the settings.
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    finetune: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.apply_kv(&io::read_config(path)?)?;
        }
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("particles", self.particles.map(|v| v.to_string()));
        put("mc_samples", self.mc_samples.map(|v| v.to_string()));
        put("n_networks", self.n_networks.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("iters", self.iters.map(|v| v.to_string()));
        put("n_tasks", self.n_tasks.map(|v| v.to_string()));
        if let Some(lr) = self.lr {
            put("lr", Some(lr.to_string()));
            put("finetune_lr", Some(lr.to_string()));
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        cfg.apply_kv(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn write_resolved(&self, cfg: &ExperimentConfig) -> Result<()> {
        io::write_file(&self.out.join("config.txt"), io::format_config(&cfg.to_kv()).as_bytes())
    }
}

fn load_suite(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<EnvironmentSuite> {
    let suite = match path {
        Some(p) => io::read_json(p)?,
        None => cfg.build_suite()?,
    };
    suite.validate()?;
    Ok(suite)
}

fn single_task(path: &Path) -> Result<Task> {
    let mut tasks = io::read_dataset(path)?;
    match tasks.len() {
        1 => Ok(tasks.remove(0)),
        n => Err(Error::Parse {
            path: path.into(),
            pointer: String::new(),
            message: format!("expected exactly one task, found {n}"),
        }),
    }
}

/// The held-out (last) environment's rotation, with any given files
/// replacing the generated sets.
fn rotation(cfg: &ExperimentConfig, data: &DataArgs) -> Result<RotationData> {
    let suite = load_suite(data.suite.as_deref(), cfg)?;
    let held_out = suite.environments.len() - 1;
    let mut rot = experiment::rotation_data(cfg, &suite, held_out)?;
    if let Some(p) = &data.train {
        rot.train_tasks = io::read_dataset(p)?;
    }
    if let Some(p) = &data.finetune {
        rot.s0 = single_task(p)?;
    }
    if let Some(p) = &data.test {
        rot.s_test = single_task(p)?;
    }
    Ok(rot)
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = common.resolve(ExperimentConfig::default())?;
    let suite = cfg.build_suite()?;
    let rot = experiment::rotation_data(&cfg, &suite, suite.environments.len() - 1)?;
    io::write_json(&common.out.join("suite.json"), &suite)?;
    io::write_dataset(&common.out.join("train.jsonl"), &rot.train_tasks)?;
    io::write_dataset(&common.out.join("finetune.jsonl"), std::slice::from_ref(&rot.s0))?;
    io::write_dataset(&common.out.join("test.jsonl"), std::slice::from_ref(&rot.s_test))?;
    common.write_resolved(&cfg)?;
    println!(
        "wrote {} environments, {} training tasks to {}",
        suite.environments.len(),
        rot.train_tasks.len(),
        common.out.display()
    );
    Ok(())
}

fn meta_train(common: &Common, data: &DataArgs) -> Result<()> {
    let cfg = common.resolve(ExperimentConfig::default())?;
    let rot = rotation(&cfg, data)?;
    let arch = cfg.arch(input_dim(&rot)?)?;
    let seed = cfg.rotation_seed(rot.rotation);
    let meta = cfg.meta_for(seed);
    let mut rows = Vec::new();
    let out = pipeline::meta_train_with(&arch, &meta, &rot.train_tasks, None, |p| {
        rows.push(MetricsRow {
            method: Method::Boml.name().into(),
            rotation: rot.rotation,
            phase: Phase::Meta,
            step: p.step,
            mean_error_m: None,
            std_error_m: None,
            mean_uncertainty_m: None,
            bound_emp_term: p.bound.as_ref().map(|b| b.empirical),
            bound_kl_term: p.bound.as_ref().map(|b| b.kl_term),
            wall_ms: 0,
        });
        Ok(())
    })?;
    let temp = meta.temperature(rot.train_tasks.len())?;
    let ckpt = Checkpoint::new(&arch, &out.particles, TemperatureRecord::from(&temp), seed);
    io::save_checkpoint(&common.out.join("checkpoint.json"), &ckpt)?;
    io::write_metrics(&common.out.join("metrics.csv"), &rows)?;
    common.write_resolved(&cfg)?;
    println!("meta-trained {} iterations; checkpoint in {}", out.iterations, common.out.display());
    Ok(())
}

/// Settings with the checkpoint's temperature as the base.
fn resolve_with_checkpoint(common: &Common, ckpt: &Checkpoint) -> Result<ExperimentConfig> {
    let mut base = ExperimentConfig::default();
    base.meta.beta = ckpt.temperature.beta;
    base.meta.lambda = Some(ckpt.temperature.lambda);
    base.meta.mc_samples = ckpt.temperature.mc_samples;
    base.hidden_dims = ckpt.arch.hidden_dims.clone();
    common.resolve(base)
}

fn fine_tune(common: &Common, data: &DataArgs, checkpoint: &Path, steps: Option<usize>) -> Result<()> {
    let ckpt = io::load_checkpoint(checkpoint)?;
    let mut cfg = resolve_with_checkpoint(common, &ckpt)?;
    if let Some(s) = steps {
        cfg.finetune.steps = s;
    }
    let rot = rotation(&cfg, data)?;
    check_dim(&ckpt, &rot)?;
    let ft = cfg.finetune_for(cfg.rotation_seed(rot.rotation));
    let eval_seed = cfg.eval_seed(rot.rotation);
    let mut rows = Vec::new();
    let tuned = pipeline::fine_tune_with(&ckpt.arch, &ckpt.particle_set(), &rot.s0, &ft, |step, set| {
        let r = pipeline::evaluate(&ckpt.arch, set, &rot.s_test, cfg.n_networks, eval_seed)?;
        rows.push(MetricsRow {
            method: Method::Boml.name().into(),
            rotation: rot.rotation,
            phase: Phase::Finetune,
            step,
            mean_error_m: Some(r.mean_error),
            std_error_m: Some(r.std_error),
            mean_uncertainty_m: Some(r.mean_uncertainty),
            bound_emp_term: None,
            bound_kl_term: None,
            wall_ms: 0,
        });
        Ok(())
    })?;
    let temp = ft.temperature()?;
    let out = Checkpoint::new(&ckpt.arch, &tuned, TemperatureRecord::from(&temp), ckpt.seed);
    io::save_checkpoint(&common.out.join("finetuned.json"), &out)?;
    io::write_metrics(&common.out.join("metrics.csv"), &rows)?;
    common.write_resolved(&cfg)?;
    if let Some(last) = rows.last() {
        println!(
            "fine-tuned {} steps; test error {:.3} m",
            last.step,
            last.mean_error_m.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn evaluate(common: &Common, data: &DataArgs, checkpoint: &Path) -> Result<()> {
    let ckpt = io::load_checkpoint(checkpoint)?;
    let cfg = resolve_with_checkpoint(common, &ckpt)?;
    let rot = rotation(&cfg, data)?;
    check_dim(&ckpt, &rot)?;
    let report = pipeline::evaluate(
        &ckpt.arch,
        &ckpt.particle_set(),
        &rot.s_test,
        cfg.n_networks,
        cfg.eval_seed(rot.rotation),
    )?;
    io::write_json(&common.out.join("eval.json"), &report)?;
    common.write_resolved(&cfg)?;
    let summary = serde_json::json!({
        "mean_error_m": report.mean_error,
        "std_error_m": report.std_error,
        "mean_uncertainty_m": report.mean_uncertainty,
        "n_networks": report.n_networks,
    });
    println!("{summary}");
    Ok(())
}

fn baseline(common: &Common, data: &DataArgs, method: BaselineMethod) -> Result<()> {
    let mut cfg = common.resolve(ExperimentConfig::default())?;
    cfg.methods = vec![match method {
        BaselineMethod::Maml => Method::Maml,
        BaselineMethod::Randinit => Method::Randinit,
        BaselineMethod::Knn => Method::Knn,
    }];
    let rot = rotation(&cfg, data)?;
    let out = experiment::run_on_data(&cfg, &rot, None, Some(&common.out))?;
    io::write_metrics(&common.out.join("metrics.csv"), &out.rows)?;
    common.write_resolved(&cfg)?;
    if let Some(err) = out.rows.last().and_then(|r| r.mean_error_m) {
        println!("{}: final test error {err:.3} m", cfg.methods[0].name());
    }
    Ok(())
}

fn run_experiment(common: &Common, suite: Option<&Path>) -> Result<()> {
    let cfg = common.resolve(ExperimentConfig::default())?;
    let suite = load_suite(suite, &cfg)?;
    let rows = experiment::run_experiment(&cfg, &suite, &common.out)?;
    io::write_json(&common.out.join("suite.json"), &suite)?;
    common.write_resolved(&cfg)?;
    println!(
        "{} rotations, {} metric rows in {}",
        suite.environments.len(),
        rows.len(),
        common.out.join("metrics.csv").display()
    );
    Ok(())
}

fn input_dim(rot: &RotationData) -> Result<usize> {
    rot.s0
        .feature_dim()
        .ok_or_else(|| Error::InvalidInput("fine-tuning set is empty".into()))
}

fn check_dim(ckpt: &Checkpoint, rot: &RotationData) -> Result<()> {
    let d = input_dim(rot)?;
    if d != ckpt.arch.input_dim {
        return Err(Error::InvalidInput(format!(
            "checkpoint expects {} features, data has {d}",
            ckpt.arch.input_dim
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::MetaTrain { common, data } => meta_train(common, data),
        Command::FineTune {
            common,
            data,
            checkpoint,
            steps,
        } => fine_tune(common, data, checkpoint, *steps),
        Command::Evaluate {
            common,
            data,
            checkpoint,
        } => evaluate(common, data, checkpoint),
        Command::Baseline { common, data, method } => baseline(common, data, *method),
        Command::Experiment { common, suite } => run_experiment(common, suite.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
