//! Iterative correction of observation model error.
//!
//! Each iteration filters the record with the current corrected observation
//! function `g + b`, measures the raw residuals `y_k - g(x_k)` against the
//! uncorrected `g`, smooths them over delay-coordinate neighbors and uses the
//! result as the next correction. Neighbor lists are built once from the
//! observations and never change between iterations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ModelSpec, ObservationSeries, Rk4Workspace, Trajectory};
use crate::enkf::{run_filter, FilterConfig, FilterRun};
use crate::error::{OmecError, Result};
use crate::metrics::{pearson, rmse};
use crate::observation::{
    CorrectedObservationFunction, CorrectionTable, DelayIndex, LocalizedDelayIndex, NeighborTable,
    ObservationFunction, ObservationOperator, Smoother,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Localization {
    /// One delay space built from the full observation vector.
    None,
    /// Per-node delay spaces from each ring node and its two neighbors.
    Ring3,
}

/// How residual parameters are obtained from the raw residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Use the raw residuals directly (each point is its own nearest neighbor).
    Simple,
    /// Solve the kernel-weight system `W bhat = y - g(x)` in least squares.
    LinearSystem,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Multiple of the mean absolute observation value.
    RelativeToObservations(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmecConfig {
    pub max_iterations: usize,
    pub threshold: Threshold,
    pub delays: usize,
    pub neighbors: usize,
    pub localization: Localization,
    pub estimator: Estimator,
    /// Keep every iteration's filter run and correction table. Otherwise
    /// only the first and the latest are kept.
    pub record_history: bool,
    /// Steps discarded before computing RMSE; defaults to `max(d, 50)`.
    pub spin_up: Option<usize>,
}

impl Default for OmecConfig {
    fn default() -> Self {
        OmecConfig {
            max_iterations: 20,
            threshold: Threshold::RelativeToObservations(1e-3),
            delays: 2,
            neighbors: 100,
            localization: Localization::None,
            estimator: Estimator::Simple,
            record_history: true,
            spin_up: None,
        }
    }
}

impl OmecConfig {
    pub fn spin_up_steps(&self) -> usize {
        self.spin_up.unwrap_or(self.delays.max(50))
    }
}

/// Produces state estimates for a record under a given observation operator.
pub trait StateEstimator {
    fn estimate(&self, obs: &ObservationSeries, obs_op: &dyn ObservationOperator) -> Result<FilterRun>;
}

/// The ensemble Kalman filter as a [`StateEstimator`].
pub struct EnsembleFilter<'a> {
    pub model: &'a ModelSpec,
    pub config: &'a FilterConfig,
}

impl StateEstimator for EnsembleFilter<'_> {
    fn estimate(&self, obs: &ObservationSeries, obs_op: &dyn ObservationOperator) -> Result<FilterRun> {
        run_filter(obs, self.model, obs_op, self.config)
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Undefined for the first iteration.
    pub delta_g: Option<f64>,
    pub rmse: Option<DVector<f64>>,
    pub nll: Option<f64>,
    /// Mean trace of R over the second half of the run.
    pub stabilized_trace_r: f64,
    pub run: Option<FilterRun>,
    pub table: Option<CorrectionTable>,
    /// Set when the linear-system estimator could not fit its targets exactly.
    pub rank_deficient: bool,
}

#[derive(Debug)]
pub struct OmecResult {
    pub iterations: Vec<IterationRecord>,
    pub smoother: Arc<Smoother>,
    /// `g + b` with the newest correction.
    pub corrected: CorrectedObservationFunction,
    /// Absolute Δg threshold that was applied.
    pub threshold: f64,
    pub spin_up: usize,
    /// Error that stopped the loop early; earlier iterations are kept.
    pub failure: Option<OmecError>,
}

impl OmecResult {
    pub fn delta_g_series(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|r| r.delta_g).collect()
    }

    pub fn rmse_series(&self) -> Vec<DVector<f64>> {
        self.iterations.iter().filter_map(|r| r.rmse.clone()).collect()
    }

    pub fn first_run(&self) -> Option<&FilterRun> {
        self.iterations.first().and_then(|r| r.run.as_ref())
    }

    pub fn last_run(&self) -> Option<&FilterRun> {
        self.iterations.last().and_then(|r| r.run.as_ref())
    }

    pub fn last_table(&self) -> Option<&CorrectionTable> {
        self.iterations.last().and_then(|r| r.table.as_ref())
    }
}

/// `y_k - g(x_k^+)` against the uncorrected observation function.
pub fn raw_residuals(obs: &ObservationSeries, base_g: &ObservationFunction, run: &FilterRun) -> Result<DMatrix<f64>> {
    if run.len() != obs.len() || base_g.output_dim() != obs.dim() || base_g.input_dim() != run.posterior_means.ncols() {
        return Err(OmecError::DimensionMismatch(format!(
            "run {:?}, observations {:?}, g maps {} -> {}",
            run.posterior_means.shape(),
            obs.observations.shape(),
            base_g.input_dim(),
            base_g.output_dim()
        )));
    }
    Ok(&obs.observations - base_g.eval_rows(&run.posterior_means))
}

/// Mean over time of the summed absolute change between two residual tables.
pub fn delta_g(current: &DMatrix<f64>, previous: &DMatrix<f64>) -> f64 {
    let t = current.nrows().max(1) as f64;
    current.iter().zip(previous.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / t
}

/// Least-squares parameters of the kernel-weight system.
#[derive(Debug, Clone)]
pub struct CorrectionSystemSolution {
    /// `T x m`; rows before the delay window are copied from the targets.
    pub parameters: DMatrix<f64>,
    /// Some component could not be fitted to relative residual `1e-6`,
    /// meaning its weight matrix is numerically rank deficient.
    pub rank_deficient: bool,
}

const RIDGE: f64 = 1e-8;

/// Solves `W bhat = targets` per observation component, where row `k` of `W`
/// holds the neighbor weights of step `k`. Uses CGLS started from the targets
/// themselves; components whose system cannot be fitted are re-solved with a
/// `1e-8` ridge and flagged.
pub fn solve_correction_system(smoother: &Smoother, targets: &DMatrix<f64>) -> Result<CorrectionSystemSolution> {
    if targets.nrows() != smoother.total_steps() {
        return Err(OmecError::DimensionMismatch(format!(
            "targets have {} rows, neighbor tables cover {} steps",
            targets.nrows(),
            smoother.total_steps()
        )));
    }
    if let Smoother::Localized(ts) = smoother {
        if ts.len() != targets.ncols() {
            return Err(OmecError::DimensionMismatch("node count differs from target columns".into()));
        }
    }
    let mut parameters = targets.clone();
    let mut rank_deficient = false;
    for j in 0..targets.ncols() {
        let table = smoother.table_for(j);
        let first = table.first_step();
        let rhs = targets.column(j).iter().skip(first).cloned().collect::<Vec<_>>();
        let (mut x, rel_residual) = cgls(table, &rhs, 0.0);
        if !(rel_residual <= 1e-6) {
            rank_deficient = true;
            x = cgls(table, &rhs, RIDGE).0;
        }
        for (i, v) in x.into_iter().enumerate() {
            parameters[(first + i, j)] = v;
        }
    }
    Ok(CorrectionSystemSolution {
        parameters,
        rank_deficient,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cgls(table: &NeighborTable, rhs: &[f64], ridge: f64) -> (Vec<f64>, f64) {
    let len = rhs.len();
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return (vec![0.0; len], 0.0);
    }
    let mut x = rhs.to_vec();
    let mut wx = vec![0.0; len];
    table.apply_indexed(&x, &mut wx);
    let mut r = rhs.iter().zip(&wx).map(|(a, b)| a - b).collect::<Vec<_>>();
    let mut s = vec![0.0; len];
    table.apply_transpose_indexed(&r, &mut s);
    s.iter_mut().zip(&x).for_each(|(si, xi)| *si -= ridge * xi);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let stop = 1e-13 * gamma.sqrt().max(1e-300);
    let mut q = vec![0.0; len];
    for _ in 0..5000 {
        if gamma.sqrt() <= stop {
            break;
        }
        table.apply_indexed(&p, &mut q);
        let delta = dot(&q, &q) + ridge * dot(&p, &p);
        if delta <= 0.0 {
            break;
        }
        let alpha = gamma / delta;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        table.apply_transpose_indexed(&r, &mut s);
        s.iter_mut().zip(&x).for_each(|(si, xi)| *si -= ridge * xi);
        let gamma_next = dot(&s, &s);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
    }
    table.apply_indexed(&x, &mut wx);
    let res = rhs.iter().zip(&wx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (x, res / rhs_norm)
}

/// Smoothed corrections from the two estimators on the same residuals.
#[derive(Debug, Clone)]
pub struct EstimatorComparison {
    /// `W r`: residuals smoothed directly.
    pub direct: DMatrix<f64>,
    /// `W bhat` with `bhat` solving `W bhat = r`.
    pub system: DMatrix<f64>,
    /// Per-component Pearson correlation over the indexed steps.
    pub correlations: Vec<f64>,
    pub rank_deficient: bool,
    pub first_step: usize,
}

pub fn compare_estimators(smoother: &Smoother, residuals: &DMatrix<f64>) -> Result<EstimatorComparison> {
    let direct = smoother.smooth(residuals)?;
    let sol = solve_correction_system(smoother, residuals)?;
    let system = smoother.smooth(&sol.parameters)?;
    let first = smoother.first_step();
    let correlations = (0..residuals.ncols())
        .map(|j| pearson(&direct.column(j).as_slice()[first..], &system.column(j).as_slice()[first..]))
        .collect();
    Ok(EstimatorComparison {
        direct,
        system,
        correlations,
        rank_deficient: sol.rank_deficient,
        first_step: first,
    })
}

/// Negative log-likelihood of a state sequence under corrected observations:
///
/// `sum_k 1/2 |y_k - g(x_k) - b_k|^2_R + 1/2 |x_{k+1} - f(x_k)|^2_Q`
///
/// where `|v|^2_A = v^T A^-1 v` and `f` is the deterministic propagation over
/// one observation interval.
pub fn negative_log_likelihood(
    states: &DMatrix<f64>,
    corrections: &DMatrix<f64>,
    obs: &ObservationSeries,
    base_g: &ObservationFunction,
    model: &ModelSpec,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    let (t, n) = states.shape();
    let m = obs.dim();
    if t != obs.len() || corrections.shape() != (t, m) || n != model.dim() || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(OmecError::DimensionMismatch("likelihood inputs disagree in shape".into()));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| OmecError::InvalidCovariance("R is not positive definite".into()))?;
    let q_chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| OmecError::InvalidCovariance("Q is not positive definite".into()))?;
    let predicted = base_g.eval_rows(states);
    let mut total = 0.0;
    for k in 0..t {
        let nu = DVector::from_iterator(m, (0..m).map(|j| obs.observations[(k, j)] - predicted[(k, j)] - corrections[(k, j)]));
        total += 0.5 * nu.dot(&r_chol.solve(&nu));
    }
    let mut ws = Rk4Workspace::new(n);
    let mut x = vec![0.0; n];
    for k in 0..t.saturating_sub(1) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = states[(k, j)];
        }
        if !model.propagate(&mut x, &mut ws) {
            return Err(OmecError::IntegrationBlowup { step: k });
        }
        let w = DVector::from_iterator(n, (0..n).map(|j| states[(k + 1, j)] - x[j]));
        total += 0.5 * w.dot(&q_chol.solve(&w));
    }
    Ok(total)
}

fn build_smoother(obs: &ObservationSeries, config: &OmecConfig) -> Result<Smoother> {
    match config.localization {
        Localization::None => Smoother::global(&DelayIndex::build(obs, config.delays)?, config.neighbors),
        Localization::Ring3 => Smoother::localized(&LocalizedDelayIndex::build(obs, config.delays)?, config.neighbors),
    }
}

/// Extra inputs for [`iterate_with`].
#[derive(Default)]
pub struct Diagnostics<'a> {
    pub truth: Option<&'a Trajectory>,
    /// Enables the per-iteration likelihood, using the model together with
    /// the first run's time-averaged Q and R.
    pub model: Option<&'a ModelSpec>,
    /// Called with every finished iteration, before older runs are dropped.
    pub on_iteration: Option<&'a mut dyn FnMut(&IterationRecord)>,
}

/// Runs the correction loop with the ensemble Kalman filter.
pub fn iterate(
    obs: &ObservationSeries,
    model: &ModelSpec,
    wrong_g: &ObservationFunction,
    filter_config: &FilterConfig,
    config: &OmecConfig,
    truth: Option<&Trajectory>,
) -> Result<OmecResult> {
    let filter = EnsembleFilter {
        model,
        config: filter_config,
    };
    iterate_with(
        obs,
        wrong_g,
        &filter,
        config,
        Diagnostics {
            truth,
            model: Some(model),
            on_iteration: None,
        },
    )
}

/// Runs the correction loop with any state estimator.
///
/// Iteration 0 uses `g` itself. Every later iteration uses `g + b` from the
/// previous one. The loop stops once Δg drops below the threshold (never
/// before iteration 1) or after `max_iterations`. A failing estimator ends
/// the loop and is reported in [`OmecResult::failure`].
pub fn iterate_with<E: StateEstimator + ?Sized>(
    obs: &ObservationSeries,
    base_g: &ObservationFunction,
    estimator: &E,
    config: &OmecConfig,
    mut diagnostics: Diagnostics<'_>,
) -> Result<OmecResult> {
    let t = obs.len();
    let m = obs.dim();
    if base_g.output_dim() != m {
        return Err(OmecError::DimensionMismatch(format!(
            "g has {} outputs, observations have {m}",
            base_g.output_dim()
        )));
    }
    if t <= config.delays {
        return Err(OmecError::InsufficientData(format!(
            "{t} observations cannot support {} delays",
            config.delays
        )));
    }
    if config.neighbors == 0 || config.neighbors > t - config.delays {
        return Err(OmecError::InvalidArgument(format!(
            "neighbor count {} must be between 1 and {}",
            config.neighbors,
            t - config.delays
        )));
    }
    if let Some(truth) = diagnostics.truth {
        if truth.len() != t || truth.dim() != base_g.input_dim() {
            return Err(OmecError::DimensionMismatch("truth does not match the record".into()));
        }
    }
    let spin_up = config.spin_up_steps().min(t - 1);
    let threshold = match config.threshold {
        Threshold::Absolute(v) => v,
        Threshold::RelativeToObservations(f) => f * obs.mean_abs(),
    };

    let smoother = Arc::new(build_smoother(obs, config)?);
    let mut corrections = DMatrix::zeros(t, m);
    let mut previous: Option<DMatrix<f64>> = None;
    let mut nll_noise: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut failure = None;

    for iteration in 0..=config.max_iterations {
        let op = CorrectedObservationFunction::new(base_g.clone(), corrections.clone())?;
        let run = match estimator.estimate(obs, &op) {
            Ok(run) => run,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let raw = raw_residuals(obs, base_g, &run)?;
        let (params, rank_deficient) = match config.estimator {
            Estimator::Simple => (raw, false),
            Estimator::LinearSystem => {
                let sol = solve_correction_system(&smoother, &raw)?;
                (sol.parameters, sol.rank_deficient)
            }
        };
        let smoothed = smoother.smooth(&params)?;
        let delta = previous.as_ref().map(|p| delta_g(&params, p));
        let err = match diagnostics.truth {
            Some(truth) => Some(rmse(&run.posterior_means, &truth.states, spin_up)?),
            None => None,
        };
        let nll = match diagnostics.model {
            Some(model) => {
                let (q, r) = nll_noise.get_or_insert_with(|| (run.mean_q.clone(), run.mean_r.clone()));
                negative_log_likelihood(&run.posterior_means, &smoothed, obs, base_g, model, q, r).ok()
            }
            None => None,
        };
        let table = CorrectionTable {
            iteration,
            raw: params.clone(),
            smoothed: smoothed.clone(),
            smoother: Arc::clone(&smoother),
        };
        if !config.record_history {
            if let Some(prev) = records.last_mut().filter(|r| r.iteration > 0) {
                prev.run = None;
                prev.table = None;
            }
        }
        records.push(IterationRecord {
            iteration,
            delta_g: delta,
            rmse: err,
            nll,
            stabilized_trace_r: run.mean_trace_r(t / 2),
            run: Some(run),
            table: Some(table),
            rank_deficient,
        });
        if let (Some(cb), Some(rec)) = (diagnostics.on_iteration.as_mut(), records.last()) {
            cb(rec);
        }
        corrections = smoothed;
        previous = Some(params);
        if delta.is_some_and(|d| d < threshold) {
            break;
        }
    }

    Ok(OmecResult {
        iterations: records,
        corrected: CorrectedObservationFunction::new(base_g.clone(), corrections)?,
        smoother,
        threshold,
        spin_up,
        failure,
    })
}
