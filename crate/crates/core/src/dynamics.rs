//! Dynamical models, fixed-step RK4 integration and synthetic twin-experiment
//! data (truth trajectories and noisy observations).

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::csvio;
use crate::error::{OmecError, Result};
use crate::linalg;
use crate::observation::ObservationFunction;

/// Right-hand side of an autonomous ODE `dx/dt = f(x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz63 {
    fn default() -> Self {
        Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl VectorField for Lorenz63 {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = self.sigma * (x[1] - x[0]);
        dx[1] = x[0] * (self.rho - x[2]) - x[1];
        dx[2] = x[0] * x[1] - self.beta * x[2];
    }
}

/// Lorenz-96 ring of `k` nodes:
/// `dx_i/dt = (a x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`, indices cyclic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96 {
    pub k: usize,
    pub a: f64,
    pub forcing: f64,
}

impl Lorenz96 {
    pub fn new(k: usize, a: f64, forcing: f64) -> Result<Self> {
        if k < 4 {
            return Err(OmecError::InvalidModel(format!(
                "Lorenz-96 needs at least 4 nodes, got {k}"
            )));
        }
        Ok(Lorenz96 { k, a, forcing })
    }
}

impl VectorField for Lorenz96 {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let k = self.k;
        for i in 0..k {
            let next = x[(i + 1) % k];
            let prev = x[(i + k - 1) % k];
            let prev2 = x[(i + k - 2) % k];
            dx[i] = (self.a * next - prev2) * prev - x[i] + self.forcing;
        }
    }
}

/// Lorenz-63 tendency at `x`.
pub fn lorenz63_rhs(x: &[f64], params: &Lorenz63) -> Result<[f64; 3]> {
    if x.len() != 3 {
        return Err(OmecError::DimensionMismatch(format!(
            "Lorenz-63 state has 3 components, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OmecError::InvalidInput("non-finite Lorenz-63 state".into()));
    }
    let mut out = [0.0; 3];
    params.eval(x, &mut out);
    Ok(out)
}

/// Lorenz-96 tendency at `x` (ring size taken from `x.len()`).
pub fn lorenz96_rhs(x: &[f64], a: f64, forcing: f64) -> Result<Vec<f64>> {
    let field = Lorenz96::new(x.len(), a, forcing)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OmecError::InvalidInput("non-finite Lorenz-96 state".into()));
    }
    let mut out = vec![0.0; x.len()];
    field.eval(x, &mut out);
    Ok(out)
}

#[derive(Clone)]
pub enum ModelKind {
    Lorenz63(Lorenz63),
    Lorenz96(Lorenz96),
    Custom {
        name: String,
        field: Arc<dyn VectorField>,
    },
}

impl fmt::Debug for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Lorenz63(p) => f.debug_tuple("Lorenz63").field(p).finish(),
            ModelKind::Lorenz96(p) => f.debug_tuple("Lorenz96").field(p).finish(),
            ModelKind::Custom { name, field } => f
                .debug_struct("Custom")
                .field("name", name)
                .field("dim", &field.dim())
                .finish(),
        }
    }
}

/// A dynamical model together with its sampling and process-noise settings.
///
/// `dt` is the model time between observations; each interval is covered by
/// `substeps` RK4 steps. `process_noise` is added once per interval when
/// generating truth and never inside the filter.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dt: f64,
    pub substeps: usize,
    pub process_noise: DMatrix<f64>,
}

impl ModelSpec {
    /// Lorenz-63 sampled every 0.1 time units with 10 RK4 substeps and
    /// process noise `0.01 I`.
    pub fn lorenz63(params: Lorenz63) -> Self {
        ModelSpec {
            kind: ModelKind::Lorenz63(params),
            dt: 0.1,
            substeps: 10,
            process_noise: DMatrix::identity(3, 3) * 0.01,
        }
    }

    /// Lorenz-96 ring sampled every 0.05 time units with 5 RK4 substeps and
    /// no process noise.
    pub fn lorenz96(k: usize, a: f64, forcing: f64) -> Result<Self> {
        let field = Lorenz96::new(k, a, forcing)?;
        Ok(ModelSpec {
            kind: ModelKind::Lorenz96(field),
            dt: 0.05,
            substeps: 5,
            process_noise: DMatrix::zeros(k, k),
        })
    }

    pub fn custom(name: impl Into<String>, field: Arc<dyn VectorField>, dt: f64, substeps: usize) -> Self {
        let n = field.dim();
        ModelSpec {
            kind: ModelKind::Custom {
                name: name.into(),
                field,
            },
            dt,
            substeps,
            process_noise: DMatrix::zeros(n, n),
        }
    }

    pub fn with_process_noise(mut self, q: DMatrix<f64>) -> Self {
        self.process_noise = q;
        self
    }

    pub fn with_sampling(mut self, dt: f64, substeps: usize) -> Self {
        self.dt = dt;
        self.substeps = substeps;
        self
    }

    pub fn field(&self) -> &dyn VectorField {
        match &self.kind {
            ModelKind::Lorenz63(p) => p,
            ModelKind::Lorenz96(p) => p,
            ModelKind::Custom { field, .. } => field.as_ref(),
        }
    }

    pub fn dim(&self) -> usize {
        self.field().dim()
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            ModelKind::Lorenz63(_) => "lorenz63",
            ModelKind::Lorenz96(_) => "lorenz96",
            ModelKind::Custom { name, .. } => name,
        }
    }

    pub fn parameters(&self) -> Vec<(&'static str, f64)> {
        match &self.kind {
            ModelKind::Lorenz63(p) => vec![("sigma", p.sigma), ("rho", p.rho), ("beta", p.beta)],
            ModelKind::Lorenz96(p) => vec![("a", p.a), ("F", p.forcing), ("K", p.k as f64)],
            ModelKind::Custom { .. } => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(OmecError::InvalidModel(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(OmecError::InvalidModel("substeps must be positive".into()));
        }
        if let ModelKind::Lorenz96(p) = &self.kind {
            Lorenz96::new(p.k, p.a, p.forcing)?;
        }
        let n = self.dim();
        if self.process_noise.shape() != (n, n) {
            return Err(OmecError::DimensionMismatch(format!(
                "process noise is {:?}, model dimension is {n}",
                self.process_noise.shape()
            )));
        }
        linalg::check_square(&self.process_noise, "process noise")?;
        Ok(())
    }

    /// Advances `x` in place by one observation interval without noise.
    /// Returns `false` if the state stopped being finite.
    pub fn propagate(&self, x: &mut [f64], ws: &mut Rk4Workspace) -> bool {
        let field = self.field();
        let h = self.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            ws.step(field, x, h);
        }
        x.iter().all(|v| v.is_finite())
    }
}

/// Scratch buffers for the classical fourth-order Runge-Kutta step.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Rk4Workspace {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, field: &dyn VectorField, x: &mut [f64], h: f64) {
        let n = x.len();
        field.eval(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        field.eval(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        field.eval(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        field.eval(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Time-indexed states, one row per observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub t0: f64,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>, t0: f64, dt: f64) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(OmecError::InvalidInput("trajectory needs at least one row".into()));
        }
        if !(dt > 0.0) {
            return Err(OmecError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(OmecError::InvalidInput("trajectory has non-finite entries".into()));
        }
        Ok(Trajectory { states, t0, dt })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_timed(w, "x", &self.states, self.t0, self.dt)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (states, t0, dt) = read_timed(r)?;
        Trajectory::new(states, t0, dt)
    }
}

/// Noisy observations, one row per observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub observations: DMatrix<f64>,
    pub dt: f64,
    pub noise_cov: DMatrix<f64>,
}

impl ObservationSeries {
    pub fn new(observations: DMatrix<f64>, dt: f64, noise_cov: DMatrix<f64>) -> Result<Self> {
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(OmecError::InvalidInput("observations have non-finite entries".into()));
        }
        if !(dt > 0.0) {
            return Err(OmecError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let m = observations.ncols();
        if noise_cov.shape() != (m, m) {
            return Err(OmecError::DimensionMismatch(format!(
                "noise covariance is {:?}, observations have {m} components",
                noise_cov.shape()
            )));
        }
        Ok(ObservationSeries {
            observations,
            dt,
            noise_cov,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observation(&self, k: usize) -> DVector<f64> {
        self.observations.row(k).transpose()
    }

    /// Mean absolute value over every entry of the record.
    pub fn mean_abs(&self) -> f64 {
        let n = self.observations.len().max(1);
        self.observations.iter().map(|v| v.abs()).sum::<f64>() / n as f64
    }

    /// Writes the series with time stamps starting at `t0`. The noise
    /// covariance is not part of the file.
    pub fn write_csv<W: Write>(&self, w: W, t0: f64) -> Result<()> {
        write_timed(w, "y", &self.observations, t0, self.dt)
    }

    /// Reads a series written by [`ObservationSeries::write_csv`]; the noise
    /// covariance is unknown and set to zero.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (obs, _, dt) = read_timed(r)?;
        let m = obs.ncols();
        ObservationSeries::new(obs, dt, DMatrix::zeros(m, m))
    }
}

fn write_timed<W: Write>(w: W, prefix: &str, data: &DMatrix<f64>, t0: f64, dt: f64) -> Result<()> {
    let header = std::iter::once("t".to_string())
        .chain(csvio::numbered(prefix, data.ncols()))
        .collect::<Vec<_>>();
    let times = (0..data.nrows())
        .map(|k| csvio::fmt_f64(t0 + k as f64 * dt))
        .collect::<Vec<_>>();
    csvio::write_rows(w, &header, &times, &[data])
}

fn read_timed<R: Read>(r: R) -> Result<(DMatrix<f64>, f64, f64)> {
    let (header, rows) = csvio::read_table(r)?;
    if header.first().map(String::as_str) != Some("t") || rows.is_empty() {
        return Err(OmecError::Parse("expected a `t` column and at least one row".into()));
    }
    let cols = header.len() - 1;
    let t0 = rows[0][0];
    let dt = if rows.len() > 1 { rows[1][0] - rows[0][0] } else { 1.0 };
    let flat = rows
        .iter()
        .map(|r| {
            if r.len() != cols + 1 {
                Err(OmecError::Parse("ragged row".into()))
            } else {
                Ok(&r[1..])
            }
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok((DMatrix::from_row_slice(rows.len(), cols, &flat), t0, dt))
}

/// Draws zero-mean Gaussian vectors with a fixed covariance.
struct GaussianSampler {
    root: Option<DMatrix<f64>>,
}

impl GaussianSampler {
    fn new(cov: &DMatrix<f64>) -> Self {
        if cov.iter().all(|&v| v == 0.0) {
            GaussianSampler { root: None }
        } else {
            GaussianSampler {
                root: Some(linalg::psd_sqrt(cov).0),
            }
        }
    }

    fn add_to<R: Rng>(&self, rng: &mut R, x: &mut [f64]) {
        if let Some(root) = &self.root {
            let z = DVector::from_iterator(x.len(), (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let noise = root * z;
            for (xi, ni) in x.iter_mut().zip(noise.iter()) {
                *xi += ni;
            }
        }
    }
}

/// Integrates `model` from `x0` over `num_obs_steps` observation intervals.
///
/// Row `k` of the result is the state after `k + 1` intervals, so `x0` itself
/// is not recorded. Process noise is drawn from a generator seeded with
/// `seed` and added after every interval.
pub fn integrate(model: &ModelSpec, x0: &[f64], num_obs_steps: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    integrate_with_rng(model, x0, num_obs_steps, &mut rng, 0.0)
}

fn integrate_with_rng<R: Rng>(
    model: &ModelSpec,
    x0: &[f64],
    num_obs_steps: usize,
    rng: &mut R,
    t_start: f64,
) -> Result<Trajectory> {
    model.validate()?;
    let n = model.dim();
    if x0.len() != n {
        return Err(OmecError::DimensionMismatch(format!(
            "initial state has {} components, model has {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OmecError::InvalidInput("non-finite initial state".into()));
    }
    if num_obs_steps == 0 {
        return Err(OmecError::InvalidArgument("need at least one step".into()));
    }
    let sampler = GaussianSampler::new(&model.process_noise);
    let mut ws = Rk4Workspace::new(n);
    let mut x = x0.to_vec();
    let mut flat = Vec::with_capacity(n * num_obs_steps);
    for step in 0..num_obs_steps {
        if !model.propagate(&mut x, &mut ws) {
            return Err(OmecError::IntegrationBlowup { step });
        }
        sampler.add_to(rng, &mut x);
        flat.extend_from_slice(&x);
    }
    Trajectory::new(
        DMatrix::from_row_slice(num_obs_steps, n, &flat),
        t_start + model.dt,
        model.dt,
    )
}

/// Truth for a twin experiment: a uniform random start in `[-1, 1]^n`, a
/// discarded burn-in of `burn_in` intervals, then `len` recorded intervals.
pub fn generate_truth(model: &ModelSpec, len: usize, burn_in: usize, seed: u64) -> Result<Trajectory> {
    let n = model.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x0 = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    let start = if burn_in > 0 {
        let spin = integrate_with_rng(model, &x0, burn_in, &mut rng, 0.0)?;
        spin.states.row(burn_in - 1).iter().cloned().collect()
    } else {
        x0
    };
    integrate_with_rng(model, &start, len, &mut rng, burn_in as f64 * model.dt)
}

/// Applies `obs_fn` to every state and adds seeded `N(0, r_true)` noise.
pub fn observe(
    traj: &Trajectory,
    obs_fn: &ObservationFunction,
    r_true: &DMatrix<f64>,
    seed: u64,
) -> Result<ObservationSeries> {
    if obs_fn.input_dim() != traj.dim() {
        return Err(OmecError::DimensionMismatch(format!(
            "observation function takes {} inputs, trajectory has {}",
            obs_fn.input_dim(),
            traj.dim()
        )));
    }
    let m = obs_fn.output_dim();
    if r_true.shape() != (m, m) {
        return Err(OmecError::DimensionMismatch(format!(
            "instrument noise is {:?}, observation dimension is {m}",
            r_true.shape()
        )));
    }
    linalg::check_square(r_true, "instrument noise")?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sampler = GaussianSampler::new(r_true);
    let mut flat = Vec::with_capacity(traj.len() * m);
    let mut y = vec![0.0; m];
    for k in 0..traj.len() {
        let x = traj.states.row(k).iter().cloned().collect::<Vec<_>>();
        obs_fn.eval_into(&x, &mut y);
        sampler.add_to(&mut rng, &mut y);
        flat.extend_from_slice(&y);
    }
    ObservationSeries::new(
        DMatrix::from_row_slice(traj.len(), m, &flat),
        traj.dt,
        r_true.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Still(usize);
    impl VectorField for Still {
        fn dim(&self) -> usize {
            self.0
        }
        fn eval(&self, _x: &[f64], dx: &mut [f64]) {
            dx.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn lorenz63_values() {
        let p = Lorenz63::default();
        let v = lorenz63_rhs(&[1.0, 1.0, 1.0], &p).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert!((v[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
        assert_eq!(lorenz63_rhs(&[0.0; 3], &p).unwrap(), [0.0; 3]);
        let e = 72f64.sqrt();
        let v = lorenz63_rhs(&[e, e, 27.0], &p).unwrap();
        assert!(v.iter().all(|c| c.abs() < 1e-12), "{v:?}");
        assert!(matches!(
            lorenz63_rhs(&[f64::NAN, 0.0, 0.0], &p),
            Err(OmecError::InvalidInput(_))
        ));
    }

    #[test]
    fn lorenz96_values() {
        assert_eq!(lorenz96_rhs(&[1.0, 2.0, 3.0, 4.0], 1.0, 8.0).unwrap(), vec![3.0, 5.0, 11.0, 1.0]);
        assert_eq!(lorenz96_rhs(&[8.0; 10], 1.0, 8.0).unwrap(), vec![0.0; 10]);
        assert_eq!(lorenz96_rhs(&[0.0; 6], 1.0, 8.0).unwrap(), vec![8.0; 6]);
        assert!(matches!(
            lorenz96_rhs(&[0.0; 3], 1.0, 8.0),
            Err(OmecError::InvalidModel(_))
        ));
    }

    #[test]
    fn rhs_zero_model_keeps_state() {
        let model = ModelSpec::custom("still", Arc::new(Still(2)), 0.1, 3);
        let traj = integrate(&model, &[1.5, -2.0], 5, 0).unwrap();
        for k in 0..5 {
            assert_eq!(traj.states.row(k).iter().cloned().collect::<Vec<_>>(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn substep_refinement_converges() {
        let model = ModelSpec::lorenz63(Lorenz63::default()).with_process_noise(DMatrix::zeros(3, 3));
        let x0 = [1.0, 2.0, 20.0];
        // 10 vs 20 substeps differ by ~1.4e-4 here; 20 vs 40 by ~8e-6
        let coarse = integrate(&model.clone().with_sampling(0.1, 20), &x0, 10, 0).unwrap();
        let fine = integrate(&model.with_sampling(0.1, 40), &x0, 10, 0).unwrap();
        let diff = (&coarse.states - &fine.states).amax();
        assert!(diff < 1e-4, "max difference {diff}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let model = ModelSpec::lorenz63(Lorenz63::default()).with_process_noise(DMatrix::zeros(3, 3));
        let x0 = [1.0, 2.0, 20.0];
        let one = |s: usize| integrate(&model.clone().with_sampling(0.1, s), &x0, 1, 0).unwrap().state(0);
        let reference = one(640);
        let e1 = (one(10) - &reference).amax();
        let e2 = (one(20) - &reference).amax();
        let ratio = e1 / e2;
        assert!((8.0..=32.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn integration_is_deterministic_and_seed_only_moves_noise() {
        let model = ModelSpec::lorenz63(Lorenz63::default());
        let a = integrate(&model, &[1.0, 1.0, 1.0], 50, 7).unwrap();
        let b = integrate(&model, &[1.0, 1.0, 1.0], 50, 7).unwrap();
        assert_eq!(a, b);
        let c = integrate(&model, &[1.0, 1.0, 1.0], 50, 8).unwrap();
        assert_ne!(a, c);
        let quiet = model.with_process_noise(DMatrix::zeros(3, 3));
        let d = integrate(&quiet, &[1.0, 1.0, 1.0], 50, 7).unwrap();
        let e = integrate(&quiet, &[1.0, 1.0, 1.0], 50, 8).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn blowup_is_reported() {
        struct Explode;
        impl VectorField for Explode {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, x: &[f64], dx: &mut [f64]) {
                dx[0] = x[0] * x[0];
            }
        }
        let model = ModelSpec::custom("explode", Arc::new(Explode), 1.0, 1);
        let err = integrate(&model, &[10.0], 100, 0).unwrap_err();
        assert!(matches!(err, OmecError::IntegrationBlowup { .. }), "{err}");
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let model = ModelSpec::lorenz63(Lorenz63::default());
        let truth = generate_truth(&model, 20, 10, 3).unwrap();
        let h = ObservationFunction::lorenz63_true();
        let obs = observe(&truth, &h, &DMatrix::zeros(3, 3), 1).unwrap();
        for k in 0..truth.len() {
            let x = truth.state(k);
            let expected = h.eval(x.as_slice());
            assert_eq!(obs.observation(k), expected);
        }
    }

    #[test]
    fn observation_noise_matches_covariance() {
        let n = 8000;
        let traj = Trajectory::new(DMatrix::zeros(n, 3), 0.0, 0.1).unwrap();
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5]);
        let obs = observe(&traj, &ObservationFunction::identity(3), &r, 11).unwrap();
        let y = &obs.observations;
        for i in 0..3 {
            for j in 0..3 {
                let cov = (0..n).map(|k| y[(k, i)] * y[(k, j)]).sum::<f64>() / n as f64;
                let tol = 0.1 * (r[(i, i)] * r[(j, j)]).sqrt();
                assert!((cov - r[(i, j)]).abs() < tol, "entry ({i},{j}) = {cov}");
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let model = ModelSpec::lorenz63(Lorenz63::default());
        let truth = generate_truth(&model, 30, 5, 2).unwrap();
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, truth.states);
    }

    #[test]
    fn lorenz96_spec_rejects_small_rings() {
        assert!(ModelSpec::lorenz96(3, 1.0, 8.0).is_err());
        assert!(ModelSpec::lorenz96(4, 1.0, 8.0).is_ok());
    }
}
