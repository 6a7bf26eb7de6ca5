use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::Seeds;
use crate::csvio;
use crate::error::{OmecError, Result};
use crate::metrics::{pearson, rmse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    InvalidConfig,
    NumericalFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::InvalidConfig => 1,
            RunStatus::NumericalFailure => 2,
        }
    }

    pub fn from_error(e: &OmecError) -> Self {
        if e.exit_code() == 2 {
            RunStatus::NumericalFailure
        } else {
            RunStatus::InvalidConfig
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Success => "success",
            RunStatus::InvalidConfig => "invalid_config",
            RunStatus::NumericalFailure => "numerical_failure",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "success" => Ok(RunStatus::Success),
            "invalid_config" => Ok(RunStatus::InvalidConfig),
            "numerical_failure" => Ok(RunStatus::NumericalFailure),
            _ => Err(OmecError::Parse(format!("unknown status {s:?}"))),
        }
    }
}

/// One row of `iterations.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub delta_g: Option<f64>,
    pub rmse: Option<DVector<f64>>,
    pub nll: Option<f64>,
    /// Mean trace of R over the second half of the record.
    pub trace_r: f64,
}

/// Summary of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub version: String,
    pub seeds: Seeds,
    pub state_dim: usize,
    pub spin_up: usize,
    pub iterations: Vec<IterationSummary>,
    /// RMSE of the first filter pass, which uses `g` alone.
    pub rmse_uncorrected: Option<DVector<f64>>,
    /// RMSE of the last filter pass.
    pub rmse_corrected: Option<DVector<f64>>,
    /// Per-component agreement of the two estimators, when requested.
    pub estimator_correlations: Option<Vec<f64>>,
    pub runtime_secs: f64,
    pub status: RunStatus,
    pub failure: Option<String>,
    /// Contents of `config.txt`.
    pub config: String,
}

fn mean(v: &DVector<f64>) -> f64 {
    v.sum() / v.len().max(1) as f64
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    /// Node-averaged RMSE before correction.
    pub fn mean_uncorrected(&self) -> Option<f64> {
        self.rmse_uncorrected.as_ref().map(mean)
    }

    pub fn mean_corrected(&self) -> Option<f64> {
        self.rmse_corrected.as_ref().map(mean)
    }

    /// Uncorrected over corrected RMSE, per component.
    pub fn improvement(&self) -> Option<DVector<f64>> {
        match (&self.rmse_uncorrected, &self.rmse_corrected) {
            (Some(u), Some(c)) => Some(u.component_div(c)),
            _ => None,
        }
    }

    /// RMSE at iteration `i`, if that iteration ran.
    pub fn rmse_at(&self, i: usize) -> Option<&DVector<f64>> {
        self.iterations.iter().find(|r| r.iteration == i).and_then(|r| r.rmse.as_ref())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "omec {}  scenario {}  status {}", self.version, self.name, self.status.as_str());
        let _ = writeln!(s, "seeds: truth {}, noise {}", self.seeds.truth, self.seeds.noise);
        let _ = writeln!(
            s,
            "{} iterations, state dimension {}, RMSE from step {}, runtime {:.1} s",
            self.iterations.len(),
            self.state_dim,
            self.spin_up,
            self.runtime_secs
        );
        if let Some(f) = &self.failure {
            let _ = writeln!(s, "failure: {f}");
        }
        if let (Some(u), Some(c)) = (&self.rmse_uncorrected, &self.rmse_corrected) {
            let _ = writeln!(s, "\n{:>9} {:>12} {:>12} {:>8}", "component", "uncorrected", "corrected", "ratio");
            for j in 0..u.len() {
                let _ = writeln!(s, "{:>9} {:>12.4} {:>12.4} {:>8.3}", format!("x{}", j + 1), u[j], c[j], u[j] / c[j]);
            }
            let (mu, mc) = (mean(u), mean(c));
            let _ = writeln!(s, "{:>9} {:>12.4} {:>12.4} {:>8.3}", "mean", mu, mc, mu / mc);
        }
        if let Some(corr) = &self.estimator_correlations {
            let list = corr.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "\nestimator agreement (direct vs linear system): {list}");
        }
        let _ = writeln!(s, "\n{:>4} {:>12} {:>12} {:>14} {:>10}", "iter", "delta_g", "mean rmse", "nll", "trace R");
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        for r in &self.iterations {
            let _ = writeln!(
                s,
                "{:>4} {:>12} {:>12} {:>14} {:>10.3}",
                r.iteration,
                opt(r.delta_g, 5),
                opt(r.rmse.as_ref().map(mean), 4),
                opt(r.nll, 1),
                r.trace_r
            );
        }
        s
    }

    pub(crate) fn write_iterations<W: Write>(&self, w: W) -> Result<()> {
        let n = self.state_dim;
        let header = ["iter".to_string(), "delta_g".to_string()]
            .into_iter()
            .chain(csvio::numbered("rmse_", n))
            .chain(["nll".to_string(), "trace_r".to_string()])
            .collect::<Vec<_>>();
        let rows = self.iterations.len();
        let values = DMatrix::from_fn(rows, n + 3, |i, j| {
            let r = &self.iterations[i];
            match j {
                0 => r.delta_g.unwrap_or(f64::NAN),
                j if j <= n => r.rmse.as_ref().map_or(f64::NAN, |e| e[j - 1]),
                j if j == n + 1 => r.nll.unwrap_or(f64::NAN),
                _ => r.trace_r,
            }
        });
        let lead = self.iterations.iter().map(|r| r.iteration.to_string()).collect::<Vec<_>>();
        csvio::write_rows(w, &header, &lead, &[&values])
    }

    pub(crate) fn write_meta<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "name={}", self.name)?;
        writeln!(w, "version={}", self.version)?;
        writeln!(w, "seed_truth={}", self.seeds.truth)?;
        writeln!(w, "seed_noise={}", self.seeds.noise)?;
        writeln!(w, "state_dim={}", self.state_dim)?;
        writeln!(w, "spin_up={}", self.spin_up)?;
        writeln!(w, "runtime_secs={}", csvio::fmt_f64(self.runtime_secs))?;
        writeln!(w, "status={}", self.status.as_str())?;
        if let Some(f) = &self.failure {
            writeln!(w, "failure={}", f.replace('\n', " "))?;
        }
        Ok(())
    }

    /// Rebuilds a report from the files of a run directory. RMSE values are
    /// recomputed from the truth and estimate CSVs, correlations from the
    /// estimator comparison.
    pub fn from_dir(dir: &Path) -> Result<Report> {
        let meta_text = std::fs::read_to_string(dir.join("meta.txt"))?;
        let meta = meta_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .collect::<BTreeMap<_, _>>();
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| OmecError::Parse(format!("meta.txt lacks {k}")))
        };
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|e| OmecError::Parse(format!("{k}: {e}"))) };
        let state_dim = int("state_dim")? as usize;
        let spin_up = int("spin_up")? as usize;

        let iterations = match open(dir, "iterations.csv")? {
            Some(f) => read_iterations(f, state_dim)?,
            None => Vec::new(),
        };
        let truth = open(dir, "truth.csv")?.map(|f| read_columns(f, 1, state_dim)).transpose()?;
        let estimate_rmse = |name: &str| -> Result<Option<DVector<f64>>> {
            match (&truth, open(dir, name)?) {
                (Some(t), Some(f)) => Ok(Some(rmse(&read_columns(f, 1, state_dim)?, t, spin_up)?)),
                _ => Ok(None),
            }
        };
        let estimator_correlations = match open(dir, "estimator_comparison.csv")? {
            Some(f) => {
                let (header, rows) = csvio::read_table(f)?;
                let m = (header.len() - 1) / 2;
                let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
                Some((1..=m).map(|j| pearson(&col(j), &col(j + m))).collect())
            }
            None => None,
        };
        Ok(Report {
            name: get("name")?.to_string(),
            version: get("version")?.to_string(),
            seeds: Seeds {
                truth: int("seed_truth")?,
                noise: int("seed_noise")?,
            },
            state_dim,
            spin_up,
            iterations,
            rmse_uncorrected: estimate_rmse("estimates_uncorrected.csv")?,
            rmse_corrected: estimate_rmse("estimates_final.csv")?,
            estimator_correlations,
            runtime_secs: csvio::parse_f64(get("runtime_secs")?)?,
            status: RunStatus::parse(get("status")?)?,
            failure: meta.get("failure").map(|s| s.to_string()),
            config: std::fs::read_to_string(dir.join("config.txt"))?,
        })
    }
}

fn open(dir: &Path, name: &str) -> Result<Option<BufReader<File>>> {
    let path = dir.join(name);
    if path.exists() {
        Ok(Some(BufReader::new(File::open(path)?)))
    } else {
        Ok(None)
    }
}

/// Columns `first..first + count` of a numeric CSV as a matrix.
fn read_columns<R: std::io::Read>(r: R, first: usize, count: usize) -> Result<DMatrix<f64>> {
    let (header, rows) = csvio::read_table(r)?;
    if header.len() < first + count {
        return Err(OmecError::Parse(format!("expected at least {} columns", first + count)));
    }
    Ok(DMatrix::from_fn(rows.len(), count, |i, j| rows[i][first + j]))
}

fn read_iterations<R: std::io::Read>(r: R, n: usize) -> Result<Vec<IterationSummary>> {
    let (header, rows) = csvio::read_table(r)?;
    if header.len() != n + 4 {
        return Err(OmecError::Parse(format!("iterations.csv has {} columns, expected {}", header.len(), n + 4)));
    }
    let some = |v: f64| (!v.is_nan()).then_some(v);
    Ok(rows
        .iter()
        .map(|row| {
            let rmse = DVector::from_column_slice(&row[2..2 + n]);
            IterationSummary {
                iteration: row[0] as usize,
                delta_g: some(row[1]),
                rmse: (!rmse.iter().any(|v| v.is_nan())).then_some(rmse),
                nll: some(row[n + 2]),
                trace_r: row[n + 3],
            }
        })
        .collect())
}
