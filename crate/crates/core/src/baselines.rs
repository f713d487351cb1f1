//! Comparison methods: first-order MAML, random-init fine-tuning, KNN.
//!
//! Point-estimate methods are scored with the same per-point Euclidean error
//! as [`crate::pipeline::evaluate`], treating the single network as an
//! ensemble of one (zero uncertainty).

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Architecture, FlatParams};
use crate::pipeline::{report_from_table, EvalReport, PredictionTable};
use crate::rng::{self, stream};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MamlConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// Outer (Adam) step size.
    pub meta_lr: f64,
    pub meta_iters: usize,
    pub tasks_per_iter: usize,
    pub seed: u64,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            inner_lr: 0.01,
            inner_steps: 5,
            meta_lr: 0.002,
            meta_iters: crate::pipeline::DEFAULT_META_ITERS,
            tasks_per_iter: 5,
            seed: 0,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.meta_lr > 0.0) {
            return Err(Error::config("MAML learning rates must be positive"));
        }
        if self.tasks_per_iter == 0 {
            return Err(Error::config("tasks_per_iter must be positive"));
        }
        Ok(())
    }
}

/// Random network parameters, i.i.d. standard normal (the forward pass
/// applies fan-in scaling).
pub fn random_init(arch: &Architecture, seed: u64) -> FlatParams {
    let mut r = rng::rng_for(seed, stream::MAML, u64::MAX);
    let v = (0..arch.param_count())
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    FlatParams::from_vec_unchecked(v)
}

/// Support/query split used by the inner and outer MAML loops: the first
/// half of the task adapts, the second half scores the adaptation.
pub fn support_query(task: &Task) -> (Task, Task) {
    if task.len() < 2 {
        return (task.clone(), task.clone());
    }
    task.split_at(task.len() / 2)
}

/// First-order MAML gradient for one batch of tasks at `theta0`.
pub fn maml_outer_gradient(
    arch: &Architecture,
    theta0: &FlatParams,
    batch: &[Task],
    inner_lr: f64,
    inner_steps: usize,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("MAML batch is empty"));
    }
    let mut outer = vec![0.0; arch.param_count()];
    for task in batch {
        let (support, query) = support_query(task);
        let adapted = gd(arch, theta0, &support, inner_steps, inner_lr)?;
        let (_, g) = arch.loss_grad(&adapted, &query)?;
        for (o, gi) in outer.iter_mut().zip(&g) {
            *o += gi / batch.len() as f64;
        }
    }
    Ok(outer)
}

/// Meta-initialization learned by first-order MAML.
pub fn maml_meta_train(cfg: &MamlConfig, tasks: &[Task], arch: &Architecture) -> Result<FlatParams> {
    cfg.validate()?;
    let mut theta = random_init(arch, cfg.seed);
    if cfg.meta_iters == 0 {
        return Ok(theta);
    }
    if tasks.is_empty() {
        return Err(Error::config("no training tasks available"));
    }
    let mut task_rng = rng::rng_for(cfg.seed, stream::MAML, 0);
    let n = cfg.tasks_per_iter.min(tasks.len());
    let mut adam = Adam::new(theta.len(), cfg.meta_lr);
    for _ in 0..cfg.meta_iters {
        let batch: Vec<Task> = index::sample(&mut task_rng, tasks.len(), n)
            .into_iter()
            .map(|i| tasks[i].clone())
            .collect();
        let g = maml_outer_gradient(arch, &theta, &batch, cfg.inner_lr, cfg.inner_steps)?;
        adam.descend(theta.as_mut_slice(), &g);
        if theta.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("MAML meta-parameters became non-finite"));
        }
    }
    Ok(theta)
}

/// Plain gradient descent on the fine-tuning set's MSE.
pub fn finetune_point(
    arch: &Architecture,
    theta0: &FlatParams,
    s0: &Task,
    steps: usize,
    lr: f64,
) -> Result<FlatParams> {
    finetune_point_with(arch, theta0, s0, steps, lr, usize::MAX, |_, _| Ok(()))
}

/// [`finetune_point`] with a callback at step 0 and every `every` steps.
pub fn finetune_point_with<F>(
    arch: &Architecture,
    theta0: &FlatParams,
    s0: &Task,
    steps: usize,
    lr: f64,
    every: usize,
    mut on_checkpoint: F,
) -> Result<FlatParams>
where
    F: FnMut(usize, &FlatParams) -> Result<()>,
{
    s0.require_nonempty()?;
    if !(lr > 0.0) {
        return Err(Error::config("fine-tuning learning rate must be positive"));
    }
    let mut theta = theta0.clone();
    on_checkpoint(0, &theta)?;
    for step in 1..=steps {
        let (_, g) = arch.loss_grad(&theta, s0)?;
        for (t, gi) in theta.as_mut_slice().iter_mut().zip(&g) {
            *t -= lr * gi;
        }
        if theta.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("fine-tuning diverged at step {step}")));
        }
        if step % every.max(1) == 0 || step == steps {
            on_checkpoint(step, &theta)?;
        }
    }
    Ok(theta)
}

fn gd(arch: &Architecture, theta0: &FlatParams, task: &Task, steps: usize, lr: f64) -> Result<FlatParams> {
    let mut theta = theta0.clone();
    for _ in 0..steps {
        let (_, g) = arch.loss_grad(&theta, task)?;
        for (t, gi) in theta.as_mut_slice().iter_mut().zip(&g) {
            *t -= lr * gi;
        }
    }
    Ok(theta)
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn descend(&mut self, theta: &mut [f64], g: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Mean coordinates of the `k` nearest training fingerprints.
///
/// Distances are Euclidean in feature space; ties go to the lower sample index.
pub fn knn_predict(train: &Task, x: &[f64], k: usize) -> Result<[f64; 2]> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > train.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} training samples",
            train.len()
        )));
    }
    if let Some(j) = train.samples.iter().position(|s| s.x.len() != x.len()) {
        return Err(Error::invalid(format!("training sample {j} has a different feature length")));
    }
    let mut d: Vec<(f64, usize)> = train
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d2: f64 = s.x.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = [0.0, 0.0];
    for &(_, i) in &d[..k] {
        out[0] += train.samples[i].y[0];
        out[1] += train.samples[i].y[1];
    }
    Ok([out[0] / k as f64, out[1] / k as f64])
}

/// Score one network on `s_test` as an ensemble of one.
pub fn evaluate_point(arch: &Architecture, theta: &FlatParams, s_test: &Task) -> Result<EvalReport> {
    s_test.require_nonempty()?;
    let preds = s_test
        .samples
        .iter()
        .map(|s| arch.forward(theta, &s.x))
        .collect::<Result<Vec<_>>>()?;
    let table: PredictionTable = vec![vec![preds]];
    Ok(report_from_table(&table, s_test))
}

/// Score KNN regression (trained on `train`) on `s_test`.
pub fn evaluate_knn(train: &Task, s_test: &Task, k: usize) -> Result<EvalReport> {
    s_test.require_nonempty()?;
    let preds = s_test
        .samples
        .iter()
        .map(|s| knn_predict(train, &s.x, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_table(&vec![vec![preds]], s_test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::task::Sample;
    use rand::Rng;

    fn random_task(r: &mut impl Rng, m: usize, d: usize) -> Task {
        Task::new(
            0,
            (0..m)
                .map(|_| Sample {
                    x: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                    y: [r.random_range(0.0..10.0), r.random_range(0.0..8.0)],
                })
                .collect(),
        )
    }

    #[test]
    fn knn_full_k_is_centroid() {
        let t = random_task(&mut seeded(1), 9, 3);
        let p = knn_predict(&t, &[0.1, 0.2, 0.3], 9).unwrap();
        let cx = t.samples.iter().map(|s| s.y[0]).sum::<f64>() / 9.0;
        let cy = t.samples.iter().map(|s| s.y[1]).sum::<f64>() / 9.0;
        assert!((p[0] - cx).abs() < 1e-12 && (p[1] - cy).abs() < 1e-12);
    }

    #[test]
    fn knn_exact_match_returns_label() {
        let t = random_task(&mut seeded(2), 12, 4);
        for s in &t.samples {
            assert_eq!(knn_predict(&t, &s.x, 1).unwrap(), s.y);
        }
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let t = Task::new(
            0,
            vec![
                Sample { x: vec![1.0], y: [1.0, 1.0] },
                Sample { x: vec![-1.0], y: [2.0, 2.0] },
            ],
        );
        assert_eq!(knn_predict(&t, &[0.0], 1).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let t = random_task(&mut seeded(3), 4, 2);
        assert!(knn_predict(&t, &[0.0, 0.0], 0).is_err());
        assert!(knn_predict(&t, &[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn zero_meta_iters_returns_random_init() {
        let arch = Architecture::new(3, vec![4, 4]).unwrap();
        let cfg = MamlConfig {
            meta_iters: 0,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(maml_meta_train(&cfg, &[], &arch).unwrap(), random_init(&arch, 5));
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let arch = Architecture::new(3, vec![4]).unwrap();
        let theta = random_init(&arch, 1);
        let t = random_task(&mut seeded(4), 5, 3);
        assert_eq!(finetune_point(&arch, &theta, &t, 0, 0.1).unwrap(), theta);
        assert!(finetune_point(&arch, &theta, &Task::new(0, vec![]), 3, 0.1).is_err());
    }

    #[test]
    fn evaluate_point_has_zero_uncertainty() {
        let arch = Architecture::new(3, vec![4]).unwrap();
        let theta = random_init(&arch, 2);
        let t = random_task(&mut seeded(5), 6, 3);
        let r = evaluate_point(&arch, &theta, &t).unwrap();
        assert_eq!(r.n_networks, 1);
        assert_eq!(r.mean_uncertainty, 0.0);
    }
}
