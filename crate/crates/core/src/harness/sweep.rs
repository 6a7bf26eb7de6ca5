use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use super::{run_scenario, Report, RunStatus, ScenarioConfig, Seeds};
use crate::csvio;
use crate::error::{OmecError, Result};

/// Worker count from `OMEC_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("OMEC_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Per-seed reports of a sweep and their RMSE statistics over the seeds
/// that produced both RMSE values.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<Report>,
    pub mean_uncorrected: Option<DVector<f64>>,
    pub std_uncorrected: Option<DVector<f64>>,
    pub mean_corrected: Option<DVector<f64>>,
    pub std_corrected: Option<DVector<f64>>,
}

impl SweepSummary {
    /// 2 if any seed failed numerically, otherwise 0.
    pub fn exit_code(&self) -> i32 {
        self.reports.iter().map(Report::exit_code).max().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let ok = self.reports.iter().filter(|r| r.status == RunStatus::Success).count();
        let _ = writeln!(s, "{} seeds, {} succeeded", self.seeds.len(), ok);
        let line = |label: &str, m: &Option<DVector<f64>>, sd: &Option<DVector<f64>>| match (m, sd) {
            (Some(m), Some(sd)) => {
                let cells = m.iter().zip(sd.iter()).map(|(a, b)| format!("{a:.3}±{b:.3}")).collect::<Vec<_>>();
                format!("{label:<12} {}  mean {:.3}\n", cells.join(" "), m.mean())
            }
            _ => format!("{label:<12} -\n"),
        };
        s.push_str(&line("uncorrected", &self.mean_uncorrected, &self.std_uncorrected));
        s.push_str(&line("corrected", &self.mean_corrected, &self.std_corrected));
        s
    }

    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.reports.first().map_or(0, |r| r.state_dim);
        let mut out = csv::Writer::from_writer(w);
        let header = ["seed".to_string(), "status".to_string()]
            .into_iter()
            .chain(csvio::numbered("uncorrected_", n))
            .chain(csvio::numbered("corrected_", n));
        out.write_record(header)?;
        let cells = |v: &Option<DVector<f64>>| match v {
            Some(v) => v.iter().map(|x| csvio::fmt_f64(*x)).collect::<Vec<_>>(),
            None => vec![csvio::fmt_f64(f64::NAN); n],
        };
        for (seed, r) in self.seeds.iter().zip(&self.reports) {
            let rec = [seed.to_string(), r.exit_code().to_string()]
                .into_iter()
                .chain(cells(&r.rmse_uncorrected))
                .chain(cells(&r.rmse_corrected));
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation, componentwise.
fn moments(values: &[&DVector<f64>]) -> (Option<DVector<f64>>, Option<DVector<f64>>) {
    let Some(first) = values.first() else {
        return (None, None);
    };
    let k = values.len() as f64;
    let mean = values.iter().fold(DVector::zeros(first.len()), |acc, v| acc + *v) / k;
    let var = values
        .iter()
        .fold(DVector::zeros(first.len()), |acc, v| acc + (*v - &mean).map(|d| d * d))
        / (k - 1.0).max(1.0);
    (Some(mean), Some(var.map(f64::sqrt)))
}

/// Runs `base` once per seed `s` with [`Seeds::derived`], in parallel with
/// at most `threads` workers (default: `OMEC_THREADS`, else one per core).
/// With an output directory each seed writes to `seed_<s>/` below it, and
/// the directory gets `summary.csv` and `summary.txt`.
pub fn sweep(base: &ScenarioConfig, seeds: &[u64], threads: Option<usize>) -> Result<SweepSummary> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(OmecError::Config("sweep needs at least one seed".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads.or_else(thread_cap) {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| OmecError::Config(format!("cannot start worker pool: {e}")))?;
    let reports = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut c = base.clone();
                c.seeds = Seeds::derived(s);
                c.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("seed_{s}")));
                run_scenario(&c)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let done = |f: fn(&Report) -> &Option<DVector<f64>>| {
        reports
            .iter()
            .filter(|r| r.rmse_uncorrected.is_some() && r.rmse_corrected.is_some())
            .filter_map(|r| f(r).as_ref())
            .collect::<Vec<_>>()
    };
    let (mean_uncorrected, std_uncorrected) = moments(&done(|r| &r.rmse_uncorrected));
    let (mean_corrected, std_corrected) = moments(&done(|r| &r.rmse_corrected));
    let summary = SweepSummary {
        seeds: seeds.to_vec(),
        reports,
        mean_uncorrected,
        std_uncorrected,
        mean_corrected,
        std_corrected,
    };
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir)?;
        summary.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("summary.csv"))?))?;
        std::fs::write(dir.join("summary.txt"), summary.render())?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_two_vectors() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 2.0]);
        let (m, s) = moments(&[&a, &b]);
        assert_eq!(m.unwrap().as_slice(), &[2.0, 2.0]);
        let s = s.unwrap();
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15 && s[1] == 0.0);
        assert_eq!(moments(&[]), (None, None));
    }
}
