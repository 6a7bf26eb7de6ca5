//! Unscented-style ensemble Kalman filter with adaptive estimation of the
//! process (Q) and observation (R) noise covariances.
//!
//! Ensembles are stored column-wise: an `n x E` matrix holds one member per
//! column. Moments use the plain `1/E` average over members.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::csvio;
use crate::dynamics::{ModelSpec, ObservationSeries, Rk4Workspace};
use crate::error::{OmecError, Result};
use crate::linalg;
use crate::observation::ObservationOperator;

/// How the observation-noise covariance is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseInit {
    Fixed(DMatrix<f64>),
    /// Diagonal sample variance of the innovations from a short pilot pass
    /// over the first `steps` observations.
    FromInnovations { steps: usize },
}

/// Which entries of the instantaneous Q estimate are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QStructure {
    #[default]
    Full,
    /// Off-diagonal entries are dropped. A lag-one product estimates all
    /// `n(n+1)/2` entries from one rank-one sample, which in large systems is
    /// mostly noise.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Defaults to `2n + 1`, the only size the symmetric ensemble supports.
    pub ensemble_size: Option<usize>,
    pub initial_mean: DVector<f64>,
    pub initial_cov: DMatrix<f64>,
    pub adaptive: bool,
    /// Window `tau` of the exponential moving average used by the adaptive
    /// noise estimates.
    pub adaptive_window: f64,
    pub q_init: DMatrix<f64>,
    pub r_init: NoiseInit,
    pub q_structure: QStructure,
    /// Multiplies R when adaptive estimation is off.
    pub r_inflation: f64,
    pub store_covariances: bool,
}

impl FilterConfig {
    pub fn new(n: usize) -> Self {
        FilterConfig {
            ensemble_size: None,
            initial_mean: DVector::zeros(n),
            initial_cov: DMatrix::identity(n, n),
            adaptive: true,
            adaptive_window: 50.0,
            q_init: DMatrix::identity(n, n) * 0.1,
            r_init: NoiseInit::FromInnovations { steps: 100 },
            q_structure: QStructure::Full,
            r_inflation: 1.0,
            store_covariances: false,
        }
    }

    pub fn ensemble_len(&self) -> usize {
        self.ensemble_size.unwrap_or(2 * self.initial_mean.len() + 1)
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.initial_mean.len() != n || self.initial_cov.shape() != (n, n) || self.q_init.shape() != (n, n) {
            return Err(OmecError::DimensionMismatch(format!(
                "filter initialization does not match state dimension {n}"
            )));
        }
        if let NoiseInit::Fixed(r) = &self.r_init {
            if r.shape() != (m, m) {
                return Err(OmecError::DimensionMismatch(format!(
                    "R is {:?}, observation dimension is {m}",
                    r.shape()
                )));
            }
        }
        if self.ensemble_len() != 2 * n + 1 {
            return Err(OmecError::InvalidArgument(format!(
                "ensemble size must be 2n+1 = {}, got {}",
                2 * n + 1,
                self.ensemble_len()
            )));
        }
        if !(self.adaptive_window >= 1.0) {
            return Err(OmecError::InvalidArgument(format!(
                "adaptive window must be at least 1, got {}",
                self.adaptive_window
            )));
        }
        if !(self.r_inflation >= 1.0) {
            return Err(OmecError::InvalidArgument(format!(
                "R inflation must be at least 1, got {}",
                self.r_inflation
            )));
        }
        Ok(())
    }
}

/// Builds the symmetric `2n + 1` member ensemble: the mean plus the mean
/// displaced by `+-sqrt(E/2)` times each column of the symmetric square root
/// of `cov`. Its unweighted sample covariance reproduces `cov`.
pub fn make_ensemble(mean: &DVector<f64>, cov: &DMatrix<f64>, size: usize) -> Result<DMatrix<f64>> {
    linalg::check_square(cov, "ensemble covariance")?;
    if linalg::asymmetry(cov) > linalg::symmetry_tolerance(cov) {
        return Err(OmecError::InvalidCovariance("ensemble covariance is not symmetric".into()));
    }
    let (root, _) = linalg::psd_sqrt(cov);
    ensemble_from_root(mean, &root, size)
}

fn ensemble_from_root(mean: &DVector<f64>, root: &DMatrix<f64>, size: usize) -> Result<DMatrix<f64>> {
    let n = mean.len();
    if root.shape() != (n, n) {
        return Err(OmecError::DimensionMismatch(format!(
            "covariance is {:?}, mean has {n} components",
            root.shape()
        )));
    }
    if size != 2 * n + 1 {
        return Err(OmecError::InvalidArgument(format!(
            "symmetric ensemble needs 2n+1 = {} members, got {size}",
            2 * n + 1
        )));
    }
    let scale = (size as f64 / 2.0).sqrt();
    let mut ens = DMatrix::zeros(n, size);
    ens.set_column(0, mean);
    for i in 0..n {
        let d = root.column(i) * scale;
        ens.set_column(1 + i, &(mean + &d));
        ens.set_column(1 + n + i, &(mean - &d));
    }
    Ok(ens)
}

fn column_mean(ens: &DMatrix<f64>) -> DVector<f64> {
    let e = ens.ncols() as f64;
    ens.column_sum() / e
}

fn deviations(ens: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut dev = ens.clone();
    for mut col in dev.column_iter_mut() {
        col -= mean;
    }
    dev
}

/// Propagates every member over one observation interval (no noise) and maps
/// it through the observation operator at `step`.
pub fn forecast_step(
    ensemble: &DMatrix<f64>,
    model: &ModelSpec,
    obs_op: &dyn ObservationOperator,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ensemble.nrows();
    if n != model.dim() || obs_op.input_dim() != n {
        return Err(OmecError::DimensionMismatch(format!(
            "ensemble has {n} rows, model {} and observation operator {}",
            model.dim(),
            obs_op.input_dim()
        )));
    }
    let m = obs_op.output_dim();
    let mut ws = Rk4Workspace::new(n);
    let mut prior = ensemble.clone();
    let mut obs = DMatrix::zeros(m, ensemble.ncols());
    let mut y = vec![0.0; m];
    for j in 0..ensemble.ncols() {
        let mut col = prior.column_mut(j);
        let x = col.as_mut_slice();
        if !model.propagate(x, &mut ws) {
            return Err(OmecError::FilterDivergence { step });
        }
        obs_op.eval_at(step, x, &mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OmecError::FilterDivergence { step });
        }
        obs.column_mut(j).copy_from_slice(&y);
    }
    Ok((prior, obs))
}

/// Moments and update from one analysis step.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub prior_mean: DVector<f64>,
    /// Sample covariance of the forecast ensemble, without Q.
    pub ensemble_cov: DMatrix<f64>,
    /// `P^-`: ensemble covariance plus Q.
    pub prior_cov: DMatrix<f64>,
    pub predicted_obs: DVector<f64>,
    /// `P^y`: observed-ensemble covariance plus R.
    pub obs_cov: DMatrix<f64>,
    pub cross_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub posterior_mean: DVector<f64>,
    /// Symmetrized `P^+`.
    pub posterior_cov: DMatrix<f64>,
    /// Largest `|P^+ - P^+^T|` entry before symmetrization.
    pub posterior_asymmetry: f64,
}

/// Kalman update from a forecast ensemble `prior` (`n x E`), its image in
/// observation space `obs_ens` (`m x E`) and the observation `y`.
pub fn analysis_step(
    prior: &DMatrix<f64>,
    obs_ens: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Analysis> {
    let (n, e) = prior.shape();
    let m = obs_ens.nrows();
    if obs_ens.ncols() != e || y.len() != m || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(OmecError::DimensionMismatch("analysis inputs disagree in shape".into()));
    }
    let ef = e as f64;
    let x_mean = column_mean(prior);
    let y_mean = column_mean(obs_ens);
    let dx = deviations(prior, &x_mean);
    let dy = deviations(obs_ens, &y_mean);
    let ensemble_cov = &dx * dx.transpose() / ef;
    let prior_cov = &ensemble_cov + q;
    let obs_cov = &dy * dy.transpose() / ef + r;
    let cross_cov = &dx * dy.transpose() / ef;
    // K = Pxy Py^-1, via Py K^T = Pyx
    let gain = linalg::spd_solve(&obs_cov, &cross_cov.transpose())?.transpose();
    let innovation = y - &y_mean;
    let posterior_mean = &x_mean + &gain * &innovation;
    let mut posterior_cov = &prior_cov - &gain * cross_cov.transpose();
    let posterior_asymmetry = linalg::asymmetry(&posterior_cov);
    linalg::symmetrize(&mut posterior_cov);
    if posterior_mean.iter().any(|v| !v.is_finite()) || posterior_cov.iter().any(|v| !v.is_finite()) {
        return Err(OmecError::NumericalFailure("non-finite analysis".into()));
    }
    Ok(Analysis {
        prior_mean: x_mean,
        ensemble_cov,
        prior_cov,
        predicted_obs: y_mean,
        obs_cov,
        cross_cov,
        gain,
        innovation,
        posterior_mean,
        posterior_cov,
        posterior_asymmetry,
    })
}

/// Quantities from step `k - 1` needed by the lag-one Q estimate.
#[derive(Debug, Clone)]
struct LaggedStep {
    /// `H^+ eps`
    pulled_back: DVector<f64>,
    /// `K eps`
    increment: DVector<f64>,
    ensemble_cov: DMatrix<f64>,
}

/// Singular values of `H` below this fraction of the largest are dropped when
/// mapping innovations back to state space.
const PULLBACK_RCOND: f64 = 0.3;

/// Online Q/R estimation from innovation statistics, blended into running
/// estimates by an exponential moving average.
///
/// With linearizations `F` (dynamics) and `H` (observation) recovered from
/// the ensembles, the instantaneous estimates at step `k` are
///
/// ```text
/// R~ = eps_k eps_k^T - (P^y_k - R)
/// P~ = (F_k^-1 H_k^+ eps_k + K_{k-1} eps_{k-1}) (H_{k-1}^+ eps_{k-1})^T
/// Q~ = sym(P~) - P_ens,{k-1}
/// ```
///
/// where `H^+` is a truncated pseudo-inverse, so weakly observed directions
/// contribute nothing to Q~. Then `Q <- Q + (Q~ - Q) / tau`, likewise for R,
/// with the running estimates symmetrized and eigenvalue-clipped at `floor`.
#[derive(Debug, Clone)]
pub struct AdaptiveNoise {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    window: f64,
    floor: f64,
    structure: QStructure,
    lagged: Option<LaggedStep>,
}

/// Everything the adaptive estimator needs from one filter step.
pub struct StepStatistics<'a> {
    pub analysis: &'a Analysis,
    /// Deviations of the ensemble the forecast started from (`n x E`).
    pub start_deviations: &'a DMatrix<f64>,
    /// Covariance that ensemble was built from.
    pub start_cov: &'a DMatrix<f64>,
    /// Deviations of the forecast ensemble (`n x E`).
    pub forecast_deviations: &'a DMatrix<f64>,
}

impl AdaptiveNoise {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, window: f64) -> Self {
        AdaptiveNoise {
            q,
            r,
            window,
            floor: 1e-8,
            structure: QStructure::Full,
            lagged: None,
        }
    }

    pub fn with_q_structure(mut self, structure: QStructure) -> Self {
        self.structure = structure;
        self
    }

    pub fn update(&mut self, stats: &StepStatistics<'_>) {
        let a = stats.analysis;
        let rate = 1.0 / self.window;
        let e = stats.forecast_deviations.ncols() as f64;

        let r_est = &a.innovation * a.innovation.transpose() - (&a.obs_cov - &self.r);
        let r_next = &self.r + (r_est - &self.r) * rate;
        if r_next.iter().all(|v| v.is_finite()) {
            self.r = linalg::clip_eigenvalues(&r_next, self.floor);
        }

        // H^T = P_ens^-1 Pxy
        let h = match linalg::spd_solve(&a.ensemble_cov, &a.cross_cov) {
            Ok(ht) => ht.transpose(),
            Err(_) => (linalg::sym_inverse(&a.ensemble_cov) * &a.cross_cov).transpose(),
        };
        let pulled_back = linalg::truncated_solve(&h, &a.innovation, PULLBACK_RCOND);
        if let (Some(prev), Some(pb)) = (&self.lagged, &pulled_back) {
            let cross = stats.forecast_deviations * stats.start_deviations.transpose() / e;
            let f = cross * linalg::sym_inverse(stats.start_cov);
            if let Some(w) = linalg::general_solve(&f, pb) {
                let mut q_est = (&w + &prev.increment) * prev.pulled_back.transpose();
                linalg::symmetrize(&mut q_est);
                q_est -= &prev.ensemble_cov;
                if self.structure == QStructure::Diagonal {
                    q_est = DMatrix::from_diagonal(&q_est.diagonal());
                }
                let q_next = &self.q + (q_est - &self.q) * rate;
                if q_next.iter().all(|v| v.is_finite()) {
                    self.q = linalg::clip_eigenvalues(&q_next, self.floor);
                }
            }
        }
        self.lagged = pulled_back.map(|pulled_back| LaggedStep {
            pulled_back,
            increment: &a.gain * &a.innovation,
            ensemble_cov: a.ensemble_cov.clone(),
        });
    }
}

/// Output of one filter pass over an observation record.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// `x_k^+`, `T x n`.
    pub posterior_means: DMatrix<f64>,
    /// `x_k^-`, `T x n`.
    pub prior_means: DMatrix<f64>,
    /// `y_k^-`, `T x m`.
    pub predicted_obs: DMatrix<f64>,
    /// `y_k - y_k^-`, `T x m`.
    pub innovations: DMatrix<f64>,
    /// Trace of the Q and R actually used at each step.
    pub trace_q: Vec<f64>,
    pub trace_r: Vec<f64>,
    /// `P_k^+` for every step, only when requested in the config.
    pub posterior_covs: Option<Vec<DMatrix<f64>>>,
    /// Smallest eigenvalue of each `P_k^+` before conditioning.
    pub cov_min_eigenvalues: Vec<f64>,
    /// Largest asymmetry of each `P_k^+` before symmetrization.
    pub cov_asymmetry: Vec<f64>,
    /// Q and R averaged over the second half of the run.
    pub mean_q: DMatrix<f64>,
    pub mean_r: DMatrix<f64>,
}

impl FilterRun {
    /// A run carrying only state estimates, for plugging other estimators
    /// into the correction loop.
    pub fn from_states(states: DMatrix<f64>, obs_dim: usize) -> Self {
        let (t, n) = states.shape();
        FilterRun {
            prior_means: states.clone(),
            posterior_means: states,
            predicted_obs: DMatrix::zeros(t, obs_dim),
            innovations: DMatrix::zeros(t, obs_dim),
            trace_q: vec![0.0; t],
            trace_r: vec![0.0; t],
            posterior_covs: None,
            cov_min_eigenvalues: vec![0.0; t],
            cov_asymmetry: vec![0.0; t],
            mean_q: DMatrix::zeros(n, n),
            mean_r: DMatrix::zeros(obs_dim, obs_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.posterior_means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean of trace(R_k) over steps `from..`.
    pub fn mean_trace_r(&self, from: usize) -> f64 {
        let tail = &self.trace_r[from.min(self.trace_r.len())..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// `k, x1+..xn+, innov_1..innov_m, trace_Q, trace_R`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.posterior_means.ncols();
        let m = self.innovations.ncols();
        let header = std::iter::once("k".to_string())
            .chain((1..=n).map(|i| format!("x{i}+")))
            .chain(csvio::numbered("innov_", m))
            .chain(["trace_Q".to_string(), "trace_R".to_string()])
            .collect::<Vec<_>>();
        let traces = DMatrix::from_fn(self.len(), 2, |k, j| if j == 0 { self.trace_q[k] } else { self.trace_r[k] });
        let steps = (0..self.len()).map(|k| k.to_string()).collect::<Vec<_>>();
        csvio::write_rows(w, &header, &steps, &[&self.posterior_means, &self.innovations, &traces])
    }

    /// Binary covariance sidecar: ASCII `OMEC`, version `u32`, `T` and `n`
    /// as `u64`, then `T * n * n` row-major `f64`; all little endian.
    pub fn write_covariances<W: Write>(&self, mut w: W) -> Result<()> {
        let covs = self
            .posterior_covs
            .as_ref()
            .ok_or_else(|| OmecError::InvalidArgument("run did not store covariances".into()))?;
        let n = self.posterior_means.ncols();
        w.write_all(b"OMEC")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(covs.len() as u64).to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for p in covs {
            for i in 0..n {
                for j in 0..n {
                    w.write_all(&p[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

/// Runs the filter over the whole record. Deterministic: the filter itself
/// draws no random numbers.
pub fn run_filter(
    obs: &ObservationSeries,
    model: &ModelSpec,
    obs_op: &dyn ObservationOperator,
    config: &FilterConfig,
) -> Result<FilterRun> {
    model.validate()?;
    let n = model.dim();
    let m = obs.dim();
    if obs_op.input_dim() != n || obs_op.output_dim() != m {
        return Err(OmecError::DimensionMismatch(format!(
            "observation operator maps {} -> {}, expected {n} -> {m}",
            obs_op.input_dim(),
            obs_op.output_dim()
        )));
    }
    config.validate(n, m)?;
    linalg::check_square(&config.initial_cov, "initial covariance")?;
    let r0 = match &config.r_init {
        NoiseInit::Fixed(r) => r.clone(),
        NoiseInit::FromInnovations { steps } => pilot_noise(obs, model, obs_op, config, *steps)?,
    };
    let r0 = if config.adaptive { r0 } else { r0 * config.r_inflation };
    filter_pass(obs, model, obs_op, config, config.q_init.clone(), r0, obs.len(), config.adaptive)
}

fn pilot_noise(
    obs: &ObservationSeries,
    model: &ModelSpec,
    obs_op: &dyn ObservationOperator,
    config: &FilterConfig,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let steps = steps.clamp(2, obs.len().max(2)).min(obs.len());
    let head = obs.observations.rows(0, steps);
    let var = column_variances(&head.into_owned());
    let r_guess = DMatrix::from_diagonal(&var.map(|v| v.max(1e-6)));
    let pilot = filter_pass(obs, model, obs_op, config, config.q_init.clone(), r_guess, steps, false)?;
    let var = column_variances(&pilot.innovations);
    Ok(DMatrix::from_diagonal(&var.map(|v| v.max(1e-6))))
}

fn column_variances(data: &DMatrix<f64>) -> DVector<f64> {
    let t = data.nrows().max(2) as f64;
    DVector::from_iterator(
        data.ncols(),
        data.column_iter().map(|c| {
            let mean = c.sum() / data.nrows() as f64;
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0)
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn filter_pass(
    obs: &ObservationSeries,
    model: &ModelSpec,
    obs_op: &dyn ObservationOperator,
    config: &FilterConfig,
    q0: DMatrix<f64>,
    r0: DMatrix<f64>,
    steps: usize,
    adaptive: bool,
) -> Result<FilterRun> {
    let n = model.dim();
    let m = obs.dim();
    let e = config.ensemble_len();
    let mut noise = AdaptiveNoise::new(q0, r0, config.adaptive_window).with_q_structure(config.q_structure);

    let mut posterior_means = DMatrix::zeros(steps, n);
    let mut prior_means = DMatrix::zeros(steps, n);
    let mut predicted_obs = DMatrix::zeros(steps, m);
    let mut innovations = DMatrix::zeros(steps, m);
    let mut trace_q = Vec::with_capacity(steps);
    let mut trace_r = Vec::with_capacity(steps);
    let mut covs = config.store_covariances.then(|| Vec::with_capacity(steps));
    let mut min_eigs = Vec::with_capacity(steps);
    let mut asym = Vec::with_capacity(steps);
    let half = steps / 2;
    let mut sum_q = DMatrix::zeros(n, n);
    let mut sum_r = DMatrix::zeros(m, m);

    let mut mean = config.initial_mean.clone();
    let (mut root, _) = linalg::psd_sqrt(&config.initial_cov);

    for k in 0..steps {
        let ensemble = ensemble_from_root(&mean, &root, e)?;
        let (prior, obs_ens) = forecast_step(&ensemble, model, obs_op, k)?;
        let y = obs.observation(k);
        let analysis = analysis_step(&prior, &obs_ens, &y, &noise.q, &noise.r).map_err(|err| match err {
            OmecError::NumericalFailure(_) => OmecError::FilterDivergence { step: k },
            other => other,
        })?;

        trace_q.push(noise.q.trace());
        trace_r.push(noise.r.trace());
        if k >= half {
            sum_q += &noise.q;
            sum_r += &noise.r;
        }

        let (next_root, min_eig) = linalg::psd_sqrt(&analysis.posterior_cov);
        if adaptive {
            let start_dev = deviations(&ensemble, &mean);
            let fc_dev = deviations(&prior, &analysis.prior_mean);
            let used_cov = &root * &root;
            noise.update(&StepStatistics {
                analysis: &analysis,
                start_deviations: &start_dev,
                start_cov: &used_cov,
                forecast_deviations: &fc_dev,
            });
        }

        posterior_means.set_row(k, &analysis.posterior_mean.transpose());
        prior_means.set_row(k, &analysis.prior_mean.transpose());
        predicted_obs.set_row(k, &analysis.predicted_obs.transpose());
        innovations.set_row(k, &analysis.innovation.transpose());
        min_eigs.push(min_eig);
        asym.push(analysis.posterior_asymmetry);
        if let Some(c) = covs.as_mut() {
            c.push(analysis.posterior_cov.clone());
        }

        mean = analysis.posterior_mean;
        root = next_root;
    }
    let count = (steps - half).max(1) as f64;
    Ok(FilterRun {
        posterior_means,
        prior_means,
        predicted_obs,
        innovations,
        trace_q,
        trace_r,
        posterior_covs: covs,
        cov_min_eigenvalues: min_eigs,
        cov_asymmetry: asym,
        mean_q: sum_q / count,
        mean_r: sum_r / count,
    })
}
