use proptest::prelude::*;

use bomlloc_core::io::{load_checkpoint, save_checkpoint, Checkpoint, TemperatureRecord};
use bomlloc_core::pacoh::{log_z_value_with_noise, TemperatureConfig};
use bomlloc_core::pipeline::{report_from_table, PredictionTable};
use bomlloc_core::prob::gaussian_kl;
use bomlloc_core::svgd::svgd_step;
use bomlloc_core::{Architecture, ParticleSet, PriorParticle, Sample, Task};

fn arch() -> Architecture {
    Architecture::new(2, vec![3]).unwrap()
}

fn particle(dim: usize) -> impl Strategy<Value = PriorParticle> {
    (
        prop::collection::vec(-2.0..2.0f64, dim),
        prop::collection::vec(-3.0..0.5f64, dim),
    )
        .prop_map(|(m, s)| PriorParticle::new(m, s).unwrap())
}

fn task(m: usize) -> impl Strategy<Value = Task> {
    prop::collection::vec(
        (prop::collection::vec(-2.0..2.0f64, 2), -5.0..5.0f64, -5.0..5.0f64),
        1..=m,
    )
    .prop_map(|rows| Task::new(0, rows.into_iter().map(|(x, a, b)| Sample { x, y: [a, b] }).collect()))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svgd_step_is_permutation_equivariant(
        ps in prop::collection::vec(particle(4), 2..5),
        seed in any::<u64>(),
    ) {
        let k = ps.len();
        let scores: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..8).map(|j| ((seed.wrapping_add((i * 8 + j) as u64) % 1000) as f64) / 500.0 - 1.0).collect())
            .collect();
        let set = ParticleSet::new(ps.clone()).unwrap();
        let out = svgd_step(&set, &scores, 0.01).unwrap();
        let perm: Vec<usize> = (0..k).rev().collect();
        let pset = ParticleSet::new(perm.iter().map(|&i| ps[i].clone()).collect()).unwrap();
        let pscores: Vec<Vec<f64>> = perm.iter().map(|&i| scores[i].clone()).collect();
        let pout = svgd_step(&pset, &pscores, 0.01).unwrap();
        for (pi, &i) in perm.iter().enumerate() {
            for (a, b) in pout.particles[pi].stacked().iter().zip(out.particles[i].stacked()) {
                prop_assert!(close(*a, *b));
            }
        }
    }

    #[test]
    fn log_z_is_nonpositive_and_ignores_draw_order(
        phi in particle(arch().param_count()),
        t in task(6),
        beta in 0.1..50.0f64,
        draws in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, arch().param_count()), 1..6),
    ) {
        let a = log_z_value_with_noise(&arch(), &phi, &t, beta, &draws).unwrap();
        prop_assert!(a <= 1e-12);
        let mut rev = draws.clone();
        rev.reverse();
        let b = log_z_value_with_noise(&arch(), &phi, &t, beta, &rev).unwrap();
        prop_assert!(close(a, b));
    }

    #[test]
    fn gaussian_kl_is_nonnegative(q in particle(5), p in particle(5)) {
        let kl = gaussian_kl(&q, &p).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!(gaussian_kl(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ensemble_report_is_consistent(
        k in 1usize..4,
        n in 1usize..4,
        m in 1usize..5,
        vals in prop::collection::vec(-10.0..10.0f64, 2 * 3 * 3 * 4 + 8),
    ) {
        let mut it = vals.iter().copied();
        let table: PredictionTable = (0..k)
            .map(|_| (0..n).map(|_| (0..m).map(|_| [it.next().unwrap(), it.next().unwrap()]).collect()).collect())
            .collect();
        let test = Task::new(0, (0..m).map(|_| Sample { x: vec![], y: [it.next().unwrap(), it.next().unwrap()] }).collect());
        let r = report_from_table(&table, &test);
        prop_assert_eq!(r.n_networks, k * n);
        prop_assert!(close(r.mean_error, r.per_point_error.iter().sum::<f64>() / m as f64));
        prop_assert!(r.per_point_uncertainty.iter().all(|u| *u >= 0.0));
        prop_assert!(r.std_error >= 0.0);
        // Error to the truth is at least the distance from the ensemble mean.
        for (pt, s) in test.samples.iter().enumerate() {
            let c = (k * n) as f64;
            let mx = table.iter().flatten().map(|net| net[pt][0]).sum::<f64>() / c;
            let my = table.iter().flatten().map(|net| net[pt][1]).sum::<f64>() / c;
            let d = ((mx - s.y[0]).powi(2) + (my - s.y[1]).powi(2)).sqrt();
            prop_assert!(r.per_point_error[pt] >= d - 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(ps in prop::collection::vec(particle(arch().param_count()), 1..4), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let set = ParticleSet::new(ps).unwrap();
        let temp = TemperatureConfig::new(None, 7.0, 3).unwrap();
        let ckpt = Checkpoint::new(&arch(), &set, TemperatureRecord::from(&temp), seed);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.particle_set(), set);
        prop_assert_eq!(back.seed, seed);
    }
}
