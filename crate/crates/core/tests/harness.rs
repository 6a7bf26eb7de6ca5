use std::process::Command;

use nalgebra::DMatrix;
use omec::harness::{preset, run_scenario, sweep, Report, RunStatus, PRESETS};
use omec::metrics::rmse;
use sha2::{Digest, Sha256};

fn small(name: &str) -> omec::harness::ScenarioConfig {
    let mut c = preset(name).unwrap();
    c.steps = 500;
    c.omec.max_iterations = 2;
    c.omec.neighbors = 25;
    c
}

#[test]
fn presets_are_frozen() {
    let mut hasher = Sha256::new();
    for name in PRESETS {
        hasher.update(preset(name).unwrap().describe().as_bytes());
    }
    assert_eq!(
        hex::encode(hasher.finalize()),
        "7488e5b807b3225a2694bf074389cfc7f9c2adc8fac481d1f904329c00aa97a9"
    );
}

#[test]
fn report_is_recomputable_from_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("l63");
    c.diag_linear_system = true;
    c.output_dir = Some(dir.path().to_path_buf());
    let report = run_scenario(&c).unwrap();
    assert_eq!(report.status, RunStatus::Success);
    assert!(report.estimator_correlations.is_some());
    let again = Report::from_dir(dir.path()).unwrap();
    assert_eq!(again, report);
    assert_eq!(again.render(), std::fs::read_to_string(dir.path().join("report.txt")).unwrap());
    assert_eq!(report.rmse_at(0), report.rmse_uncorrected.as_ref());
    assert_eq!(report.rmse_at(2), report.rmse_corrected.as_ref());
}

#[test]
fn output_dir_changes_no_numbers() {
    let mut c = small("l96_10");
    let in_memory = run_scenario(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    c.output_dir = Some(dir.path().join("nested"));
    let on_disk = run_scenario(&c).unwrap();
    assert_eq!(in_memory.iterations, on_disk.iterations);
    assert_eq!(in_memory.rmse_corrected, on_disk.rmse_corrected);
    assert_eq!(in_memory.config, on_disk.config);
    assert!(dir.path().join("nested/corrections/iter_02.csv").exists());
}

#[test]
fn localized_preset_runs() {
    let mut c = small("l96_40");
    c.omec.max_iterations = 1;
    let r = run_scenario(&c).unwrap();
    assert_eq!(r.status, RunStatus::Success);
    assert_eq!(r.rmse_corrected.unwrap().len(), 40);
}

#[test]
fn rmse_examples() {
    let truth = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(rmse(&truth, &truth, 0).unwrap().as_slice(), &[0.0, 0.0]);
    let shifted = truth.map(|v| v - 0.5);
    assert_eq!(rmse(&shifted, &truth, 1).unwrap().as_slice(), &[0.5, 0.5]);
    let e = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    assert_eq!(rmse(&e, &DMatrix::zeros(2, 1), 0).unwrap()[0], 1.0);
    assert!(rmse(&e, &truth, 0).is_err());
}

#[test]
fn sweep_aggregates_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("l63");
    c.output_dir = Some(dir.path().to_path_buf());
    let s = sweep(&c, &[3, 4, 5], Some(2)).unwrap();
    assert_eq!(s.reports.len(), 3);
    assert_eq!(s.exit_code(), 0);
    let seeds: Vec<u64> = s.reports.iter().map(|r| r.seeds.truth).collect();
    assert_eq!(seeds, vec![3, 4, 5]);
    let mean = s.mean_corrected.unwrap();
    let direct = s.reports.iter().map(|r| r.rmse_corrected.clone().unwrap()).sum::<nalgebra::DVector<f64>>() / 3.0;
    assert!((mean - direct).amax() < 1e-12);
    assert!(dir.path().join("seed_4/iterations.csv").exists());
    assert!(dir.path().join("summary.csv").exists());
    // a sweep seed reproduces the single run with the same seeds
    let mut single = small("l63");
    single.seeds = omec::harness::Seeds::derived(4);
    assert_eq!(run_scenario(&single).unwrap().iterations, s.reports[1].iterations);
}

#[test]
fn diverging_run_reports_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("l63");
    c.output_dir = Some(dir.path().to_path_buf());
    // members this far out overflow on the first integration step
    c.filter.initial_mean = nalgebra::DVector::from_element(3, 1e200);
    let r = run_scenario(&c).unwrap();
    assert_eq!(r.status, RunStatus::NumericalFailure);
    assert_eq!(r.exit_code(), 2);
    assert!(r.failure.as_deref().unwrap().contains("diverged"), "{:?}", r.failure);
    assert!(r.rmse_corrected.is_none());
    for f in ["config.txt", "truth.csv", "observations.csv", "meta.txt", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(Report::from_dir(dir.path()).unwrap().status, RunStatus::NumericalFailure);
}

fn omec_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omec"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = omec_bin()
        .args(["run", "--preset", "l63", "--steps", "400", "--max-iter", "1", "--neighbors", "20", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("rmse.svg").exists());

    let rendered = omec_bin().arg("report").arg(&out).output().unwrap();
    assert_eq!(rendered.status.code(), Some(0));
    assert_eq!(String::from_utf8(rendered.stdout).unwrap(), std::fs::read_to_string(out.join("report.txt")).unwrap());

    let bad = omec_bin().args(["run", "--preset", "l64"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let bad = omec_bin().args(["run", "--preset", "l63", "--neighbors", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let missing = omec_bin().arg("report").arg(dir.path().join("nothing")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn cli_config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "preset=l63\nsteps=400\nmax-iter=1\nneighbors=50\nseed-truth=8\n").unwrap();
    let out = dir.path().join("run");
    let status = omec_bin()
        .args(["run", "--neighbors", "20", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("omec.neighbors=20\n"));
    assert!(config.contains("seed_truth=8\n"));
    assert!(config.contains("steps=400\n"));
}

#[test]
fn cli_sweep_respects_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let status = omec_bin()
        .env("OMEC_THREADS", "1")
        .args(["sweep", "--preset", "l63", "--steps", "400", "--max-iter", "1", "--neighbors", "20", "--seeds", "1,2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
