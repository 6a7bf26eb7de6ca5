use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use super::report::{IterationSummary, Report, RunStatus};
use super::{rmse_chart, ScenarioConfig};
use crate::csvio;
use crate::dynamics::{generate_truth, observe};
use crate::error::{OmecError, Result};
use crate::metrics::rmse;
use crate::omec::{compare_estimators, iterate_with, Diagnostics, EnsembleFilter, IterationRecord};

/// Artifact sink; without a directory nothing is written.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d.join("corrections"))?;
        }
        Ok(Output {
            dir: dir.map(Path::to_path_buf),
        })
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        if let Some(d) = &self.dir {
            let mut w = BufWriter::new(File::create(d.join(name))?);
            f(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn is_io(e: &OmecError) -> bool {
    matches!(e, OmecError::Io(_) | OmecError::Csv(_))
}

/// Generates the twin experiment, runs the correction loop and writes all
/// artifacts.
///
/// Invalid configurations and I/O errors are returned as errors. Failures
/// inside the pipeline (a diverging filter, say) still produce a report with
/// a failure status and whatever artifacts were written up to that point.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let out = Output::new(config.output_dir.as_deref())?;
    let description = config.describe();
    out.write("config.txt", |w| Ok(w.write_all(description.as_bytes())?))?;

    let mut report = Report {
        name: config.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: config.seeds,
        state_dim: config.model.dim(),
        spin_up: config.omec.spin_up_steps(),
        iterations: Vec::new(),
        rmse_uncorrected: None,
        rmse_corrected: None,
        estimator_correlations: None,
        runtime_secs: 0.0,
        status: RunStatus::Success,
        failure: None,
        config: description,
    };
    if let Err(e) = execute(config, &out, &mut report) {
        if is_io(&e) {
            return Err(e);
        }
        report.status = RunStatus::from_error(&e);
        report.failure = Some(e.to_string());
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    out.write("meta.txt", |w| report.write_meta(w))?;
    let text = report.render();
    out.write("report.txt", |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(report)
}

fn execute(config: &ScenarioConfig, out: &Output, report: &mut Report) -> Result<()> {
    let truth = generate_truth(&config.model, config.steps, config.burn_in, config.seeds.truth)?;
    out.write("truth.csv", |w| truth.write_csv(w))?;
    let obs = observe(&truth, &config.true_obs, &config.r_true, config.seeds.noise)?;
    out.write("observations.csv", |w| obs.write_csv(w, truth.t0))?;

    let filter = EnsembleFilter {
        model: &config.model,
        config: &config.filter,
    };
    let mut io_error = None;
    let mut on_iteration = |rec: &IterationRecord| {
        report.iterations.push(IterationSummary {
            iteration: rec.iteration,
            delta_g: rec.delta_g,
            rmse: rec.rmse.clone(),
            nll: rec.nll,
            trace_r: rec.stabilized_trace_r,
        });
        if let Some(table) = &rec.table {
            let name = format!("corrections/iter_{:02}.csv", rec.iteration);
            if let Err(e) = out.write(&name, |w| table.write_csv(w)) {
                io_error.get_or_insert(e);
            }
        }
    };
    let result = iterate_with(
        &obs,
        &config.wrong_obs,
        &filter,
        &config.omec,
        Diagnostics {
            truth: Some(&truth),
            model: Some(&config.model),
            on_iteration: Some(&mut on_iteration),
        },
    )?;
    if let Some(e) = io_error {
        return Err(e);
    }
    out.write("iterations.csv", |w| report.write_iterations(w))?;
    out.write("neighbors.csv", |w| result.smoother.write_neighbors_csv(w))?;

    let spin_up = report.spin_up;
    if let Some(first) = result.first_run() {
        out.write("estimates_uncorrected.csv", |w| first.write_csv(w))?;
        report.rmse_uncorrected = Some(rmse(&first.posterior_means, &truth.states, spin_up)?);
    }
    if let Some(last) = result.last_run() {
        out.write("estimates_final.csv", |w| last.write_csv(w))?;
        report.rmse_corrected = Some(rmse(&last.posterior_means, &truth.states, spin_up)?);
        let corrected = config.wrong_obs.eval_rows(&last.posterior_means) + &result.corrected.corrections;
        out.write("corrected_observations.csv", |w| write_corrected(w, &corrected))?;
    }
    if config.diag_linear_system {
        if let Some(table) = result.iterations.first().and_then(|r| r.table.as_ref()) {
            let cmp = compare_estimators(&result.smoother, &table.raw)?;
            out.write("estimator_comparison.csv", |w| {
                let m = cmp.direct.ncols();
                let header = std::iter::once("k".to_string())
                    .chain(csvio::numbered("direct_", m))
                    .chain(csvio::numbered("system_", m))
                    .collect::<Vec<_>>();
                let first = cmp.first_step;
                let rows = cmp.direct.nrows() - first;
                let steps = (first..cmp.direct.nrows()).map(|k| k.to_string()).collect::<Vec<_>>();
                let direct = cmp.direct.rows(first, rows).into_owned();
                let system = cmp.system.rows(first, rows).into_owned();
                csvio::write_rows(w, &header, &steps, &[&direct, &system])
            })?;
            report.estimator_correlations = Some(cmp.correlations);
        }
    }
    let chart = rmse_chart(&report.iterations);
    out.write("rmse.svg", |w| Ok(w.write_all(chart.as_bytes())?))?;
    match result.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn write_corrected<W: Write>(w: W, values: &DMatrix<f64>) -> Result<()> {
    let header = std::iter::once("k".to_string())
        .chain(csvio::numbered("g_corrected_", values.ncols()))
        .collect::<Vec<_>>();
    let steps = (0..values.nrows()).map(|k| k.to_string()).collect::<Vec<_>>();
    csvio::write_rows(w, &header, &steps, &[values])
}
