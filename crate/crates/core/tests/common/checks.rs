//! Structural properties of the filter, the neighbor smoother and the
//! correction loop, as plain functions so both the property suite and the
//! acceptance run can call them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use omec::dynamics::{generate_truth, observe, Lorenz63, ModelSpec, ObservationSeries, VectorField};
use omec::enkf::{analysis_step, make_ensemble, run_filter, FilterConfig, FilterRun, NoiseInit};
use omec::harness::{preset, run_scenario};
use omec::observation::{neighbor_weights, DelayIndex, NeighborTable, ObservationFunction, ObservationOperator};
use omec::omec::{iterate_with, Diagnostics, OmecConfig, StateEstimator, Threshold};
use omec::Result;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = fn() -> std::result::Result<(), String>;

/// Every check with its name, in a fixed order.
pub const ALL: [(&str, Check); 11] = [
    ("weights are normalized and scale free", weights_are_normalized_and_scale_free),
    ("smoothing is linear", smoothing_is_linear),
    ("every point is its own nearest neighbor", every_point_is_its_own_nearest_neighbor),
    ("knn matches brute force", knn_matches_brute_force),
    ("scalar analysis is the Kalman update", scalar_analysis_is_the_kalman_update),
    ("posterior matches the Joseph form", posterior_matches_joseph_form),
    ("member order is irrelevant", reordering_members_changes_nothing),
    ("covariances stay symmetric and PSD", covariances_stay_symmetric_and_psd),
    ("adaptive filter finds the noise level", adaptive_filter_finds_the_noise_level),
    ("frozen estimates are a fixed point", frozen_estimates_are_a_fixed_point),
    ("scenario replay is byte identical", scenario_replay_is_byte_identical),
];

fn runner() -> TestRunner {
    let config = Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(s: S, f: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>) -> std::result::Result<(), String> {
    runner().run(&s, f).map_err(|e| e.to_string())
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_series(seed: u64, t: usize, m: usize) -> ObservationSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = DMatrix::from_fn(t, m, |_, _| rng.random_range(-3.0..3.0));
    ObservationSeries::new(data, 1.0, DMatrix::identity(m, m)).unwrap()
}

pub fn weights_are_normalized_and_scale_free() -> std::result::Result<(), String> {
    let strategy = (prop::collection::vec(0.0f64..50.0, 1..40), 1e-3f64..1e3);
    check(strategy, |(d, scale)| {
        let w = neighbor_weights(&d);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        let scaled: Vec<f64> = d.iter().map(|x| x * scale).collect();
        for (a, b) in w.iter().zip(neighbor_weights(&scaled)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn smoothing_is_linear() -> std::result::Result<(), String> {
    check((0u64..1000, -5.0f64..5.0, -5.0f64..5.0), |(seed, a, b)| {
        let obs = random_series(seed, 120, 2);
        let table = NeighborTable::build(&DelayIndex::build(&obs, 2).unwrap(), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let r1: Vec<f64> = (0..120).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2: Vec<f64> = (0..120).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let (s1, s2, sm) = (table.smooth_series(&r1), table.smooth_series(&r2), table.smooth_series(&mix));
        for k in 2..120 {
            prop_assert!((sm[k] - (a * s1[k] + b * s2[k])).abs() < 1e-10);
        }
        Ok(())
    })
}

pub fn every_point_is_its_own_nearest_neighbor() -> std::result::Result<(), String> {
    check((0u64..1000, 0usize..4), |(seed, d)| {
        let obs = random_series(seed, 60, 3);
        let index = DelayIndex::build(&obs, d).unwrap();
        for k in index.valid_range() {
            let hits = index.knn(k, 5).unwrap();
            prop_assert_eq!(hits.indices[0], k);
            prop_assert_eq!(hits.distances[0], 0.0);
        }
        Ok(())
    })
}

pub fn knn_matches_brute_force() -> std::result::Result<(), String> {
    for seed in 0..5 {
        let obs = random_series(seed, 100, 2);
        let index = DelayIndex::build(&obs, 1).unwrap();
        for k in index.valid_range() {
            let hits = index.knn(k, 12).unwrap();
            let mut all: Vec<(f64, usize)> = index
                .valid_range()
                .filter(|&j| j != k)
                .map(|j| {
                    let d = index.vector(j).iter().zip(index.vector(k)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = std::iter::once(k).chain(all.iter().take(11).map(|p| p.1)).collect();
            ensure!(hits.indices == expected, "step {k}: {:?} vs {expected:?}", hits.indices);
            for (d, (e, _)) in hits.distances[1..].iter().zip(&all) {
                ensure!((d - e).abs() <= 1e-12 * e.max(1.0), "step {k}: distance {d} vs {e}");
            }
        }
    }
    Ok(())
}

pub fn scalar_analysis_is_the_kalman_update() -> std::result::Result<(), String> {
    let strategy = (-10.0f64..10.0, 0.01f64..20.0, 0.0f64..5.0, 0.01f64..20.0, -10.0f64..10.0);
    check(strategy, |(x0, p, q, r, y)| {
        let ens = make_ensemble(&DVector::from_element(1, x0), &DMatrix::from_element(1, 1, p), 3).unwrap();
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let a = analysis_step(&ens, &ens, &DVector::from_element(1, y), &one(q), &one(r)).unwrap();
        // With g = identity the observed ensemble carries no Q, so the gain
        // is p / (p + r) while the prior variance is p + q.
        let k = p / (p + r);
        prop_assert!((a.gain[(0, 0)] - k).abs() < 1e-12 * (1.0 + k));
        prop_assert!((a.posterior_mean[0] - (x0 + k * (y - x0))).abs() < 1e-9 * (1.0 + x0.abs() + y.abs()));
        prop_assert!((a.posterior_cov[(0, 0)] - (p + q - k * p)).abs() < 1e-9 * (1.0 + p + q));
        Ok(())
    })
}

pub fn posterior_matches_joseph_form() -> std::result::Result<(), String> {
    check(0u64..10_000, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (3, 2);
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let ens = make_ensemble(&mean, &p, 2 * n + 1).unwrap();
        let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let obs_ens = &h * &ens;
        let q = DMatrix::identity(n, n) * rng.random_range(0.0..0.5);
        let r = DMatrix::identity(m, m) * rng.random_range(0.1..2.0);
        let y = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
        let a = analysis_step(&ens, &obs_ens, &y, &q, &r).unwrap();
        // For a linear map the sample moments are exact (Py = H P H^T + R,
        // Pxy = P H^T), so the Joseph form must reproduce the update.
        let ikh = DMatrix::identity(n, n) - &a.gain * &h;
        let joseph = &ikh * &a.ensemble_cov * ikh.transpose() + &a.gain * &r * a.gain.transpose();
        let hp = &h * &a.ensemble_cov * h.transpose();
        prop_assert!((&hp + &r - &a.obs_cov).amax() < 1e-8);
        prop_assert!((joseph - (&a.posterior_cov - &q)).amax() < 1e-8);
        Ok(())
    })
}

pub fn reordering_members_changes_nothing() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ens = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-3.0..3.0));
    let obs = ens.map(f64::sin);
    let perm = [4, 0, 6, 2, 1, 5, 3];
    let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), 7, |i, j| m[(i, perm[j])]);
    let y = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let q = DMatrix::identity(3, 3) * 0.1;
    let r = DMatrix::identity(3, 3) * 0.5;
    let a = analysis_step(&ens, &obs, &y, &q, &r).map_err(|e| e.to_string())?;
    let b = analysis_step(&pick(&ens), &pick(&obs), &y, &q, &r).map_err(|e| e.to_string())?;
    ensure!((&a.posterior_mean - &b.posterior_mean).amax() < 1e-12, "means differ");
    ensure!((&a.posterior_cov - &b.posterior_cov).amax() < 1e-12, "covariances differ");
    Ok(())
}

pub fn covariances_stay_symmetric_and_psd() -> std::result::Result<(), String> {
    let model = ModelSpec::lorenz63(Lorenz63::default());
    let truth = generate_truth(&model, 1500, 200, 3).unwrap();
    let obs = observe(&truth, &ObservationFunction::lorenz63_true(), &(DMatrix::identity(3, 3) * 2.0), 4).unwrap();
    let mut config = FilterConfig::new(3);
    config.store_covariances = true;
    let run = run_filter(&obs, &model, &ObservationFunction::identity(3), &config).map_err(|e| e.to_string())?;
    for (k, p) in run.posterior_covs.as_ref().unwrap().iter().enumerate() {
        ensure!(p == &p.transpose(), "step {k}: asymmetric");
        let min = p.clone().symmetric_eigen().eigenvalues.min();
        ensure!(min >= -1e-9 * p.amax().max(1.0), "step {k}: eigenvalue {min}");
    }
    ensure!(run.cov_asymmetry.iter().all(|&a| a < 1e-8), "asymmetry before symmetrizing");
    Ok(())
}

struct Decay;

impl VectorField for Decay {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = -0.1 * x[0];
    }
}

pub fn adaptive_filter_finds_the_noise_level() -> std::result::Result<(), String> {
    let model = ModelSpec::custom("decay", Arc::new(Decay), 0.1, 1).with_process_noise(DMatrix::from_element(1, 1, 0.01));
    let id = ObservationFunction::identity(1);
    for seed in 1..4 {
        let truth = generate_truth(&model, 5000, 100, seed).unwrap();
        let obs = observe(&truth, &id, &DMatrix::from_element(1, 1, 2.0), seed + 7).unwrap();
        let mut config = FilterConfig::new(1);
        config.r_init = NoiseInit::Fixed(DMatrix::from_element(1, 1, 0.5));
        let run = run_filter(&obs, &model, &id, &config).map_err(|e| e.to_string())?;
        let r = run.trace_r.iter().sum::<f64>() / run.trace_r.len() as f64;
        ensure!((1.5..=2.5).contains(&r), "seed {seed}: mean R {r}");
    }
    Ok(())
}

/// Returns the same states whatever observation operator it is given.
struct Frozen(DMatrix<f64>);

impl StateEstimator for Frozen {
    fn estimate(&self, obs: &ObservationSeries, _op: &dyn ObservationOperator) -> Result<FilterRun> {
        Ok(FilterRun::from_states(self.0.clone(), obs.dim()))
    }
}

pub fn frozen_estimates_are_a_fixed_point() -> std::result::Result<(), String> {
    let obs = random_series(2, 300, 2);
    let states = DMatrix::from_fn(300, 2, |k, j| (k as f64 * 0.1 + j as f64).sin());
    let config = OmecConfig {
        max_iterations: 4,
        neighbors: 20,
        threshold: Threshold::Absolute(-1.0),
        ..OmecConfig::default()
    };
    let g = ObservationFunction::identity(2);
    let res = iterate_with(&obs, &g, &Frozen(states.clone()), &config, Diagnostics::default()).map_err(|e| e.to_string())?;
    ensure!(res.iterations.len() == 5, "{} iterations", res.iterations.len());
    for r in &res.iterations[1..] {
        ensure!(r.delta_g == Some(0.0), "iteration {}: delta g {:?}", r.iteration, r.delta_g);
    }
    // residuals are measured against g itself, never against g + b
    let raw = &res.iterations[3].table.as_ref().unwrap().raw;
    ensure!(raw == &(&obs.observations - &states), "residuals used the corrected map");
    Ok(())
}

pub fn scenario_replay_is_byte_identical() -> std::result::Result<(), String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let mut c = preset("l63").unwrap();
        c.steps = 600;
        c.omec.max_iterations = 2;
        c.omec.neighbors = 30;
        c.output_dir = Some(d.path().to_path_buf());
        reports.push(run_scenario(&c).map_err(|e| e.to_string())?);
    }
    ensure!(reports[0].iterations == reports[1].iterations, "iteration summaries differ");
    let files: Vec<_> = walk(dirs[0].path())
        .into_iter()
        .map(|p| p.strip_prefix(dirs[0].path()).unwrap().to_path_buf())
        .filter(|rel| rel.extension().is_some_and(|e| e == "csv") || rel.file_name().is_some_and(|n| n == "config.txt"))
        .collect();
    ensure!(files.len() >= 9, "only {files:?}");
    for rel in files {
        let a = std::fs::read(dirs[0].path().join(&rel)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&rel)).unwrap();
        ensure!(a == b, "{} differs", rel.display());
    }
    Ok(())
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
