//! Acceptance criteria 1-9. Every test writes one `criterion N: PASS|FAIL`
//! line straight to stderr (bypassing the test harness capture) before
//! asserting, so a full `cargo test` log shows the verdict of each.
//!
//! Criteria 5-7 run full meta-training and take several minutes.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use bomlloc_core::baselines::knn_predict;
use bomlloc_core::experiment::{self, ExperimentConfig, Method};
use bomlloc_core::io;
use bomlloc_core::pacoh::{self, TemperatureConfig};
use bomlloc_core::pipeline::{self, init_particles};
use bomlloc_core::prob::{self, gaussian_kl, sample_theta, LOG_SIGMA_FLOOR};
use bomlloc_core::rng::{self, stream};
use bomlloc_core::svgd::{svgd_step, ParticleSet};
use bomlloc_core::{envsim, Architecture, FlatParams, PriorParticle, Sample, Task};
use rand::Rng;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} ({detail})");
}

fn random_task(r: &mut impl Rng, m: usize, d: usize) -> Task {
    Task::new(
        0,
        (0..m)
            .map(|_| Sample {
                x: (0..d).map(|_| r.random_range(-1.5..1.5)).collect(),
                y: [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)],
            })
            .collect(),
    )
}

fn random_arch(r: &mut impl Rng) -> Architecture {
    let d = r.random_range(1..5);
    let depth = r.random_range(0..3);
    let hidden = (0..depth).map(|_| r.random_range(2..6)).collect();
    Architecture::new(d, hidden).unwrap()
}

/// Gradient-check error: `|a - b| / max(|a|, |b|, 1)`.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let mut r = rng::seeded(101);
    let h = 1e-6;

    let mut worst_net = 0.0f64;
    for _ in 0..60 {
        let arch = random_arch(&mut r);
        let m = r.random_range(1..7);
        let task = random_task(&mut r, m, arch.input_dim);
        let theta: Vec<f64> = (0..arch.param_count()).map(|_| r.random_range(-1.5..1.5)).collect();
        let (_, g) = arch.loss_grad(&FlatParams::new(&arch, theta.clone()).unwrap(), &task).unwrap();
        let f = |t: &[f64]| arch.loss(&FlatParams::new(&arch, t.to_vec()).unwrap(), &task).unwrap();
        let fd = central_diff(&f, &theta, h);
        for (a, b) in g.iter().zip(&fd) {
            worst_net = worst_net.max(rel_err(*a, *b));
        }
    }

    let mut worst_z = 0.0f64;
    for _ in 0..60 {
        let arch = random_arch(&mut r);
        let m = r.random_range(1..7);
        let task = random_task(&mut r, m, arch.input_dim);
        let p = arch.param_count();
        let mu: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..p).map(|_| r.random_range(-2.5..0.0)).collect();
        let phi = PriorParticle::new(mu, ls).unwrap();
        let beta = r.random_range(0.2..3.0);
        let noise = pacoh::draw_noise(p, r.random_range(1..5), &mut r);
        let (_, g) = pacoh::log_z_tilde_with_noise(&arch, &phi, &task, beta, &noise).unwrap();
        let f = |v: &[f64]| {
            let phi = PriorParticle::from_stacked(v.to_vec()).unwrap();
            pacoh::log_z_value_with_noise(&arch, &phi, &task, beta, &noise).unwrap()
        };
        let fd = central_diff(&f, phi.stacked(), h);
        for (a, b) in g.iter().zip(&fd) {
            worst_z = worst_z.max(rel_err(*a, *b));
        }
    }
    let pass = worst_net < 1e-4 && worst_z < 1e-4;
    report(
        1,
        pass,
        &format!("max rel err loss_grad {worst_net:.2e}, ln Z~ {worst_z:.2e}, 60 instances each"),
    );
    assert!(pass);
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[test]
fn criterion_2_oracle_equivalence() {
    // ln Z~ against quadrature on a model with one random parameter: an
    // affine net whose other three parameters are point masses at 0.
    let arch = Architecture::new(1, vec![]).unwrap();
    let mut r = rng::seeded(202);
    let task = Task::new(
        0,
        (0..6)
            .map(|_| {
                let x: f64 = r.random_range(-1.0..1.0);
                Sample {
                    x: vec![x],
                    y: [1.3 * x + 0.1 * r.random_range(-1.0..1.0), 0.0],
                }
            })
            .collect(),
    );
    let (mu0, sigma0, beta) = (0.4, 0.7, 3.0);
    let phi = PriorParticle::new(
        vec![mu0, 0.0, 0.0, 0.0],
        vec![f64::ln(sigma0), LOG_SIGMA_FLOOR, LOG_SIGMA_FLOOR, LOG_SIGMA_FLOOR],
    )
    .unwrap();
    let loss = |w: f64| task.samples.iter().map(|s| (w * s.x[0] - s.y[0]).powi(2)).sum::<f64>() / task.len() as f64;
    let density = |w: f64| (-(w - mu0).powi(2) / (2.0 * sigma0 * sigma0)).exp() / (sigma0 * (2.0 * std::f64::consts::PI).sqrt());
    let z = simpson(&|w| density(w) * (-beta * loss(w)).exp(), mu0 - 12.0 * sigma0, mu0 + 12.0 * sigma0, 1e-13);
    let ln_z = z.ln();

    let l = 10_000;
    let estimate = |index: u64| {
        let mut rr = rng::rng_for(202, stream::MONTE_CARLO, index);
        let noise = pacoh::draw_noise(4, l, &mut rr);
        let mc = pacoh::log_z_value_with_noise(&arch, &phi, &task, beta, &noise).unwrap();
        // Delta-method standard error of ln(mean exp(-beta L)).
        let a: Vec<f64> = noise
            .iter()
            .map(|eps| {
                let theta = sample_theta(&phi, eps).unwrap();
                (-beta * arch.loss(&theta, &task).unwrap()).exp()
            })
            .collect();
        let mean = a.iter().sum::<f64>() / l as f64;
        let sd = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (l - 1) as f64).sqrt();
        (mc, sd / ((l as f64).sqrt() * mean))
    };
    let (mc, se) = estimate(0);
    // The standard error itself must be honest: z-scores over independent
    // replicates should have roughly unit spread.
    let z: Vec<f64> = (1..=40)
        .map(|i| {
            let (v, s) = estimate(i);
            (v - ln_z) / s
        })
        .collect();
    let z_sd = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt();
    let lnz_ok = (mc - ln_z).abs() <= 3.0 * se && (0.7..1.4).contains(&z_sd);

    // Gaussian KL against 1-D integration.
    let mut worst_kl = 0.0f64;
    for _ in 0..20 {
        let (mq, lq) = (r.random_range(-2.0..2.0), r.random_range(-1.5..1.0));
        let (mp, lp) = (r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
        let q = PriorParticle::new(vec![mq], vec![lq]).unwrap();
        let p = PriorParticle::new(vec![mp], vec![lp]).unwrap();
        let (sq, sp) = (f64::exp(lq), f64::exp(lp));
        let logn = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let integrand = |x: f64| {
            let lqx = logn(x, mq, sq);
            lqx.exp() * (lqx - logn(x, mp, sp))
        };
        let numeric = simpson(&integrand, mq - 20.0 * sq, mq + 20.0 * sq, 1e-12);
        worst_kl = worst_kl.max((gaussian_kl(&q, &p).unwrap() - numeric).abs());
    }
    let kl_ok = worst_kl < 1e-6;

    // KNN against exhaustive search.
    let mut knn_ok = true;
    for _ in 0..200 {
        let m = r.random_range(1..25);
        let d = r.random_range(1..5);
        let mut train = random_task(&mut r, m, d);
        // Duplicate some rows to exercise ties.
        if m > 3 {
            let dup = train.samples[0].x.clone();
            train.samples[2].x = dup;
        }
        let k = r.random_range(1..=m);
        let query: Vec<f64> = if r.random_bool(0.3) {
            train.samples[0].x.clone()
        } else {
            (0..d).map(|_| r.random_range(-1.5..1.5)).collect()
        };
        let mut taken = vec![false; m];
        let mut sum = [0.0, 0.0];
        for _ in 0..k {
            let mut best: Option<(f64, usize)> = None;
            for (i, s) in train.samples.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let d2: f64 = s.x.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, i));
                }
            }
            let i = best.unwrap().1;
            taken[i] = true;
            sum[0] += train.samples[i].y[0];
            sum[1] += train.samples[i].y[1];
        }
        let expect = [sum[0] / k as f64, sum[1] / k as f64];
        knn_ok &= knn_predict(&train, &query, k).unwrap() == expect;
    }

    let pass = lnz_ok && kl_ok && knn_ok;
    report(
        2,
        pass,
        &format!(
            "ln Z~ {mc:.6} vs quadrature {ln_z:.6} (3 SE = {:.2e}, replicate z rms {z_sd:.2}); KL max err {worst_kl:.1e}; KNN exact {knn_ok}",
            3.0 * se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_svgd_degenerate_cases() {
    let mut r = rng::seeded(303);
    let dim = 6;
    let rand_particle = |r: &mut rand_chacha::ChaCha8Rng| {
        PriorParticle::from_stacked((0..2 * dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let eta = 0.002;

    let p = rand_particle(&mut r);
    let score: Vec<f64> = (0..2 * dim).map(|_| r.random_range(-5.0..5.0)).collect();
    let next = svgd_step(&ParticleSet::new(vec![p.clone()]).unwrap(), &[score.clone()], eta).unwrap();
    let single_ok = next.particles[0]
        .stacked()
        .iter()
        .zip(p.stacked())
        .zip(&score)
        .all(|((n, o), s)| *n == o + eta * s);

    let q = rand_particle(&mut r);
    let set = ParticleSet::new(vec![q.clone(), q.clone(), rand_particle(&mut r)]).unwrap();
    let scores = vec![score.clone(), score.clone(), vec![0.3; 2 * dim]];
    let next = svgd_step(&set, &scores, eta).unwrap();
    let coincident_ok = next.particles[0] == next.particles[1];

    let a: Vec<f64> = (0..2 * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let set = ParticleSet::new(vec![
        PriorParticle::from_stacked(a.clone()).unwrap(),
        PriorParticle::from_stacked(neg.clone()).unwrap(),
    ])
    .unwrap();
    let next = svgd_step(&set, &[vec![0.0; 2 * dim], vec![0.0; 2 * dim]], eta).unwrap();
    let mut sym_ok = true;
    for i in 0..2 * dim {
        let d0 = next.particles[0].stacked()[i] - a[i];
        let d1 = next.particles[1].stacked()[i] - neg[i];
        sym_ok &= (d0 + d1).abs() <= 1e-15 * d0.abs().max(1e-300) && d0 * a[i] >= 0.0;
    }

    let pass = single_ok && coincident_ok && sym_ok;
    report(
        3,
        pass,
        &format!("K=1 exact {single_ok}, coincident stay together {coincident_ok}, symmetric repulsion {sym_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_error_is_the_two_level_average() {
    let mut r = rng::seeded(404);
    let arch = Architecture::new(3, vec![5, 4]).unwrap();
    let s_test = random_task(&mut r, 9, 3);
    let mut all_ok = true;
    let mut runs = 0;
    for k in 1..=5 {
        let set = init_particles(&arch, k, 0.5, 40 + k as u64).unwrap();
        for n in 1..=10 {
            let seed = (k * 100 + n) as u64;
            let rep = pipeline::evaluate(&arch, &set, &s_test, n, seed).unwrap();
            // Rebuild the K x N prediction table from the documented streams.
            let table: Vec<Vec<Vec<[f64; 2]>>> = set
                .particles
                .iter()
                .enumerate()
                .map(|(i, phi)| {
                    let mut rr = rng::rng_for(seed, stream::EVALUATE, i as u64);
                    (0..n)
                        .map(|_| {
                            let eps = prob::standard_normal_vec(arch.param_count(), &mut rr);
                            let theta = sample_theta(phi, &eps).unwrap();
                            s_test.samples.iter().map(|s| arch.forward(&theta, &s.x).unwrap()).collect()
                        })
                        .collect()
                })
                .collect();
            for (m, s) in s_test.samples.iter().enumerate() {
                let mut outer = 0.0;
                for particle in &table {
                    let mut inner = 0.0;
                    for net in particle {
                        let p = net[m];
                        inner += ((p[0] - s.y[0]).powi(2) + (p[1] - s.y[1]).powi(2)).sqrt();
                    }
                    outer += inner / n as f64;
                }
                all_ok &= rep.per_point_error[m] == outer / k as f64;
            }
            let mean = rep.per_point_error.iter().sum::<f64>() / s_test.len() as f64;
            all_ok &= rep.mean_error == mean && rep.n_networks == k * n;
            runs += 1;
        }
    }
    report(4, all_ok, &format!("{runs} (K, N) combinations with K<=5, N<=10, exact equality"));
    assert!(all_ok);
}

struct SeedRun {
    boml: Vec<f64>,
    randinit: Vec<f64>,
    maml: Vec<f64>,
}

const SEEDS: u64 = 10;

fn full_config(seed: u64, n_tasks: usize, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        n_tasks,
        methods,
        ..ExperimentConfig::default()
    }
}

fn run_seed(seed: u64, n_tasks: usize, methods: Vec<Method>) -> experiment::RotationOutcome {
    let cfg = full_config(seed, n_tasks, methods);
    let suite = cfg.build_suite().unwrap();
    let rotation = seed as usize % suite.environments.len();
    experiment::run_rotation(&cfg, &suite, rotation, None).unwrap()
}

/// Fine-tuning curves at 100 training tasks for seeds 1..=10, computed once
/// and shared by criteria 5-7.
fn hundred_task_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (1..=SEEDS)
            .map(|seed| {
                let out = run_seed(seed, 100, vec![Method::Boml, Method::Randinit, Method::Maml]);
                SeedRun {
                    boml: out.curves["boml"].clone(),
                    randinit: out.curves["randinit"].clone(),
                    maml: out.curves["maml"].clone(),
                }
            })
            .collect()
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn last(v: &[f64]) -> f64 {
    *v.last().unwrap()
}

/// Relative excess of the final value over the curve minimum.
fn overshoot(curve: &[f64]) -> f64 {
    let min = curve.iter().copied().fold(f64::INFINITY, f64::min);
    last(curve) / min - 1.0
}

#[test]
fn criterion_5_meta_learning_beats_random_init() {
    let runs = hundred_task_runs();
    let boml: Vec<f64> = runs.iter().map(|r| last(&r.boml)).collect();
    let rand: Vec<f64> = runs.iter().map(|r| last(&r.randinit)).collect();
    let (mb, mr) = (median(&boml), median(&rand));
    let pass = mb <= 0.85 * mr;
    report(
        5,
        pass,
        &format!(
            "median error BOML {mb:.3} m vs random init {mr:.3} m, reduction {:.1}% (need >= 15%)",
            100.0 * (1.0 - mb / mr)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_fine_tuning_does_not_overfit() {
    let runs = hundred_task_runs();
    let mut good = 0;
    let mut detail = Vec::new();
    for r in runs {
        let (b, m) = (overshoot(&r.boml), overshoot(&r.maml));
        if b < 0.10 && m > b {
            good += 1;
        }
        detail.push(format!("{:.1}/{:.1}", 100.0 * b, 100.0 * m));
    }
    let pass = good >= 7;
    report(
        6,
        pass,
        &format!(
            "{good}/{SEEDS} seeds satisfied; final-over-minimum % BOML/MAML per seed: {}",
            detail.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_more_tasks_do_not_hurt() {
    let runs = hundred_task_runs();
    let at_100: Vec<f64> = runs[..5].iter().map(|r| last(&r.boml)).collect();
    let at_1000: Vec<f64> = (1..=5)
        .map(|seed| last(&run_seed(seed, 1000, vec![Method::Boml]).curves["boml"]))
        .collect();
    let (m100, m1000) = (median(&at_100), median(&at_1000));
    let pass = m1000 <= m100;
    report(
        7,
        pass,
        &format!("median BOML error {m1000:.3} m at 1000 tasks vs {m100:.3} m at 100 tasks, 5 seeds"),
    );
    assert!(pass);
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 17,
        d_train: 2,
        hidden_dims: vec![8, 8],
        n_tasks: 12,
        task_size: 10,
        finetune_size: 8,
        test_size: 10,
        n_networks: 4,
        ..ExperimentConfig::default()
    };
    cfg.meta.max_iters = 30;
    cfg.meta.eval_every = 10;
    cfg.finetune.steps = 20;
    cfg.finetune.checkpoint_every = 5;
    cfg.maml.meta_iters = 20;
    cfg
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let cfg = small_config();
    let suite = cfg.build_suite().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    experiment::run_experiment(&cfg, &suite, a.path()).unwrap();
    experiment::run_experiment(&cfg, &suite, b.path()).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let identical = !fa.is_empty() && fa == fb && fa.iter().any(|(n, _)| n == "metrics.csv");

    // Reloaded checkpoint evaluates exactly like the in-memory particles.
    let outcome = experiment::run_rotation(&cfg, &suite, 0, None).unwrap();
    let live = outcome.boml_meta.unwrap();
    let loaded = io::load_checkpoint(&a.path().join("rotation_0/boml_meta.json")).unwrap();
    let arch = cfg.arch(suite.feature_dim()).unwrap();
    let data = experiment::rotation_data(&cfg, &suite, 0).unwrap();
    let e1 = pipeline::evaluate(&arch, &live, &data.s_test, 10, 5).unwrap();
    let e2 = pipeline::evaluate(&loaded.arch, &loaded.particle_set(), &data.s_test, 10, 5).unwrap();
    let round_trip = loaded.particle_set() == live && e1 == e2;

    let mut again = ExperimentConfig::default();
    again.apply_kv(&cfg.to_kv()).unwrap();
    let config_ok = again == cfg;

    let pass = identical && round_trip && config_ok;
    report(
        8,
        pass,
        &format!(
            "{} output files byte-identical {identical}; checkpoint round trip exact {round_trip}; resolved config round trip {config_ok}",
            fa.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_uncertainty_tracks_prior_spread() {
    let suite = envsim::make_suite(4, 9, true).unwrap();
    let arch = Architecture::new(suite.feature_dim(), vec![16, 16]).unwrap();
    let mut r = rng::rng_for(9, stream::DATASET, 0);
    let s_test = suite.sample_task(4, 50, &mut r).unwrap();
    // Three particles sharing one mean, so the only spread is prior variance.
    let mu = init_particles(&arch, 1, 0.5, 9).unwrap().particles[0].mu().to_vec();
    let with_log_sigma = |ls: f64| ParticleSet {
        particles: (0..3)
            .map(|_| PriorParticle::new(mu.clone(), vec![ls; mu.len()]).unwrap())
            .collect(),
        step_count: 0,
    };

    let zero = pipeline::evaluate(&arch, &with_log_sigma(LOG_SIGMA_FLOOR), &s_test, 10, 3).unwrap();
    let zero_ok = zero.mean_uncertainty == 0.0 && zero.per_point_uncertainty.iter().all(|u| *u == 0.0);

    let levels = [-6.0, -4.0, -3.0, -2.0, -1.0, -0.5, 0.0];
    let u: Vec<f64> = levels
        .iter()
        .map(|&ls| pipeline::evaluate(&arch, &with_log_sigma(ls), &s_test, 10, 3).unwrap().mean_uncertainty)
        .collect();
    let increasing = u.windows(2).all(|w| w[1] > w[0]);

    let pass = zero_ok && increasing;
    let shown: Vec<String> = u.iter().map(|v| format!("{v:.4}")).collect();
    report(
        9,
        pass,
        &format!(
            "zero-variance uncertainty {} m; uncertainty at log sigma {levels:?}: {}",
            zero.mean_uncertainty,
            shown.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn temperature_defaults_are_task_size_and_task_count() {
    // Guards the defaults the acceptance runs rely on.
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.lambda(), 100.0);
    assert_eq!(cfg.meta.beta, None);
    let t = TemperatureConfig::new(None, 100.0, 5).unwrap();
    assert_eq!(t.beta_for(&random_task(&mut rng::seeded(1), 50, 2)), 50.0);
}
