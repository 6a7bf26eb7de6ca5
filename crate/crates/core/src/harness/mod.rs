//! Twin-experiment scenarios: presets, end-to-end runs, reports and sweeps.
//!
//! A run writes everything it measured into one directory:
//!
//! | file | contents |
//! |---|---|
//! | `config.txt` | canonical scenario description |
//! | `truth.csv`, `observations.csv` | the generated record |
//! | `iterations.csv` | `iter, delta_g, rmse_1..n, nll, trace_r` |
//! | `corrections/iter_XX.csv` | raw residuals and smoothed corrections |
//! | `neighbors.csv` | neighbor indices per step (and node) |
//! | `estimates_uncorrected.csv`, `estimates_final.csv` | filter output |
//! | `corrected_observations.csv` | `g(x) + b` along the final estimates |
//! | `estimator_comparison.csv` | only with the linear-system diagnostic |
//! | `rmse.svg` | RMSE against iteration |
//! | `meta.txt`, `report.txt` | run metadata and the rendered summary |
//!
//! [`Report::from_dir`] rebuilds the report from these files alone.

mod config;
mod report;
mod run;
mod svg;
mod sweep;

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{Lorenz63, ModelSpec};
use crate::enkf::{FilterConfig, NoiseInit, QStructure};
use crate::error::{OmecError, Result};
use crate::observation::{ElementaryMap, ObservationFunction};
use crate::omec::{Estimator, Localization, OmecConfig, Threshold};

pub use config::RunOptions;
pub use report::{IterationSummary, Report, RunStatus};
pub use run::run_scenario;
pub use svg::rmse_chart;
pub use sweep::{sweep, thread_cap, SweepSummary};

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["l63", "l96_10", "l96_40"];

/// Seeds for the two random streams of a twin experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub truth: u64,
    pub noise: u64,
}

impl Seeds {
    /// The pair used for seed `s` in sweeps: truth `s`, noise `s + 100`.
    pub fn derived(s: u64) -> Self {
        Seeds {
            truth: s,
            noise: s.wrapping_add(100),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelSpec,
    /// `h`, the map that generates the observations.
    pub true_obs: ObservationFunction,
    /// `g`, the map handed to the filter.
    pub wrong_obs: ObservationFunction,
    pub steps: usize,
    pub burn_in: usize,
    pub r_true: DMatrix<f64>,
    pub seeds: Seeds,
    pub filter: FilterConfig,
    pub omec: OmecConfig,
    /// Also compare the direct and linear-system estimators on the first
    /// iteration's residuals.
    pub diag_linear_system: bool,
    /// Where artifacts go; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
}

/// Builds one of the named scenarios in [`PRESETS`].
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "l63" => {
            let model = ModelSpec::lorenz63(Lorenz63::default());
            Ok(ScenarioConfig {
                name: name.into(),
                filter: FilterConfig::new(3),
                model,
                true_obs: ObservationFunction::lorenz63_true(),
                wrong_obs: ObservationFunction::identity(3),
                steps: 8000,
                burn_in: 1000,
                r_true: DMatrix::identity(3, 3) * 2.0,
                seeds: Seeds::derived(1),
                omec: OmecConfig {
                    max_iterations: 20,
                    delays: 2,
                    neighbors: 100,
                    record_history: false,
                    ..OmecConfig::default()
                },
                diag_linear_system: false,
                output_dir: None,
            })
        }
        "l96_10" | "l96_40" => {
            let k = if name == "l96_10" { 10 } else { 40 };
            let mut filter = FilterConfig::new(k);
            filter.q_structure = QStructure::Diagonal;
            let mut omec = OmecConfig {
                max_iterations: 15,
                delays: 2,
                neighbors: 100,
                record_history: false,
                ..OmecConfig::default()
            };
            if k == 40 {
                omec.localization = Localization::Ring3;
            }
            Ok(ScenarioConfig {
                name: name.into(),
                model: ModelSpec::lorenz96(k, 1.0, 8.0)?,
                true_obs: ObservationFunction::circulant_ring(k, 1.0, 1.2, 1.1)?,
                wrong_obs: ObservationFunction::identity(k),
                steps: 10000,
                burn_in: 1000,
                r_true: DMatrix::identity(k, k) * 2.0,
                seeds: Seeds::derived(1),
                filter,
                omec,
                diag_linear_system: false,
                output_dir: None,
            })
        }
        _ => Err(OmecError::Config(format!(
            "unknown preset {name:?}; expected one of {}",
            PRESETS.join(", ")
        ))),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OmecError::Config(msg));
        self.model.validate().map_err(|e| OmecError::Config(e.to_string()))?;
        let n = self.model.dim();
        let (h, g) = (&self.true_obs, &self.wrong_obs);
        if h.input_dim() != n || g.input_dim() != n || h.output_dim() != g.output_dim() {
            return bad(format!(
                "h maps {} -> {} and g maps {} -> {}, model dimension is {n}",
                h.input_dim(),
                h.output_dim(),
                g.input_dim(),
                g.output_dim()
            ));
        }
        let m = h.output_dim();
        if self.r_true.shape() != (m, m) {
            return bad(format!("R is {:?}, observation dimension is {m}", self.r_true.shape()));
        }
        if self.steps <= self.omec.delays + 1 {
            return bad(format!("{} steps cannot support {} delays", self.steps, self.omec.delays));
        }
        let usable = self.steps - self.omec.delays;
        if self.omec.neighbors == 0 || self.omec.neighbors > usable {
            return bad(format!("neighbors must be between 1 and {usable}, got {}", self.omec.neighbors));
        }
        if self.omec.localization == Localization::Ring3 && m < 3 {
            return bad("ring localization needs at least 3 observed nodes".into());
        }
        if self.omec.spin_up_steps() >= self.steps {
            return bad(format!("spin-up {} leaves no steps", self.omec.spin_up_steps()));
        }
        self.filter.validate(n, m).map_err(|e| OmecError::Config(e.to_string()))
    }

    /// Canonical `key=value` description of every setting that affects the
    /// numbers. The output directory is left out.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("name", self.name.clone());
        kv("model", self.model.name().to_string());
        for (k, v) in self.model.parameters() {
            kv(&format!("model.{k}"), v.to_string());
        }
        kv("model.dt", self.model.dt.to_string());
        kv("model.substeps", self.model.substeps.to_string());
        kv("model.process_noise", matrix_text(&self.model.process_noise));
        kv("true_obs", obs_text(&self.true_obs));
        kv("wrong_obs", obs_text(&self.wrong_obs));
        kv("steps", self.steps.to_string());
        kv("burn_in", self.burn_in.to_string());
        kv("r_true", matrix_text(&self.r_true));
        kv("seed_truth", self.seeds.truth.to_string());
        kv("seed_noise", self.seeds.noise.to_string());
        let f = &self.filter;
        kv("filter.ensemble_size", f.ensemble_len().to_string());
        kv("filter.initial_mean", vector_text(&f.initial_mean));
        kv("filter.initial_cov", matrix_text(&f.initial_cov));
        kv("filter.adaptive", f.adaptive.to_string());
        kv("filter.adaptive_window", f.adaptive_window.to_string());
        kv("filter.q_init", matrix_text(&f.q_init));
        kv(
            "filter.r_init",
            match &f.r_init {
                NoiseInit::Fixed(r) => format!("fixed {}", matrix_text(r)),
                NoiseInit::FromInnovations { steps } => format!("innovations {steps}"),
            },
        );
        kv(
            "filter.q_structure",
            match f.q_structure {
                QStructure::Full => "full",
                QStructure::Diagonal => "diagonal",
            }
            .into(),
        );
        kv("filter.r_inflation", f.r_inflation.to_string());
        let o = &self.omec;
        kv("omec.max_iterations", o.max_iterations.to_string());
        kv(
            "omec.threshold",
            match o.threshold {
                Threshold::Absolute(v) => format!("absolute {v}"),
                Threshold::RelativeToObservations(v) => format!("relative {v}"),
            },
        );
        kv("omec.delays", o.delays.to_string());
        kv("omec.neighbors", o.neighbors.to_string());
        kv(
            "omec.localization",
            match o.localization {
                Localization::None => "none",
                Localization::Ring3 => "ring3",
            }
            .into(),
        );
        kv(
            "omec.estimator",
            match o.estimator {
                Estimator::Simple => "direct",
                Estimator::LinearSystem => "linear_system",
            }
            .into(),
        );
        kv("omec.spin_up", o.spin_up_steps().to_string());
        kv("diag_linear_system", self.diag_linear_system.to_string());
        s
    }
}

fn vector_text(v: &DVector<f64>) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Diagonal matrices as `diag(a b c)`, anything else row by row.
fn matrix_text(a: &DMatrix<f64>) -> String {
    let diagonal = (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0));
    if diagonal && a.is_square() {
        format!("diag({})", vector_text(&a.diagonal()))
    } else {
        let rows = a
            .row_iter()
            .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>();
        format!("[{}]", rows.join("; "))
    }
}

fn obs_text(f: &ObservationFunction) -> String {
    match f {
        ObservationFunction::Identity { dim } => format!("identity {dim}"),
        ObservationFunction::Componentwise(maps) => {
            let parts = maps
                .iter()
                .map(|m| match m {
                    ElementaryMap::Identity => "x".to_string(),
                    ElementaryMap::Sin => "sin".to_string(),
                    ElementaryMap::Cos => "cos".to_string(),
                    ElementaryMap::Shift(c) => format!("x{c:+}"),
                    ElementaryMap::Affine { scale, offset } => format!("{scale}x{offset:+}"),
                })
                .collect::<Vec<_>>();
            format!("componentwise {}", parts.join(" "))
        }
        ObservationFunction::Linear(c) => format!("linear {}", matrix_text(c)),
        ObservationFunction::Custom {
            input_dim,
            output_dim,
            ..
        } => format!("custom {input_dim}->{output_dim}"),
    }
}
