use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omec::harness::{self, Report, RunOptions};
use omec::OmecError;

/// Twin experiments for ensemble Kalman filtering with observation model
/// error correction.
#[derive(Parser)]
#[command(name = "omec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(Flags),
    /// Re-render the summary of a finished run from its CSVs.
    Report { dir: PathBuf },
    /// Run a scenario over several seeds and aggregate RMSE.
    Sweep {
        #[command(flatten)]
        flags: Flags,
        /// Seeds as a list (`1,2,5`) or an inclusive range (`1..10`).
        #[arg(long, default_value = "1..10")]
        seeds: String,
        /// Worker threads; defaults to OMEC_THREADS or one per core.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Flags {
    /// l63, l96_10 or l96_40.
    #[arg(long)]
    preset: Option<String>,
    /// key=value file with the same keys as these flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed_truth: Option<u64>,
    #[arg(long)]
    seed_noise: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    delays: Option<usize>,
    /// Number of observations.
    #[arg(long)]
    steps: Option<usize>,
    /// Keep Q and R at their initial values.
    #[arg(long)]
    no_adaptive: bool,
    /// Compare the direct and linear-system estimators on the first residuals.
    #[arg(long)]
    diag_linear_system: bool,
    /// Use the linear-system estimator inside the loop (slow).
    #[arg(long)]
    linear_system: bool,
    /// Give the filter the true observation function.
    #[arg(long)]
    control: bool,
}

impl Flags {
    fn options(&self) -> Result<RunOptions, OmecError> {
        let file = match &self.config {
            Some(path) => RunOptions::load(path)?,
            None => RunOptions::default(),
        };
        let set = |b: bool| b.then_some(true);
        Ok(file.overridden_by(RunOptions {
            preset: self.preset.clone(),
            seed_truth: self.seed_truth,
            seed_noise: self.seed_noise,
            out: self.out.clone(),
            max_iter: self.max_iter,
            neighbors: self.neighbors,
            delays: self.delays,
            steps: self.steps,
            no_adaptive: set(self.no_adaptive),
            diag_linear_system: set(self.diag_linear_system),
            control: set(self.control),
            linear_system: set(self.linear_system),
        }))
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, OmecError> {
    let bad = || OmecError::Config(format!("cannot read seeds {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().map_err(|_| bad())?, b.trim().parse::<u64>().map_err(|_| bad())?);
        return if a <= b { Ok((a..=b).collect()) } else { Err(bad()) };
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn execute(cli: Cli) -> Result<i32, OmecError> {
    match cli.command {
        Command::Run(flags) => {
            let mut config = flags.options()?.scenario()?;
            if config.output_dir.is_none() {
                config.output_dir = Some(PathBuf::from(format!("omec-{}", config.name)));
            }
            let report = harness::run_scenario(&config)?;
            print!("{}", report.render());
            if let Some(dir) = &config.output_dir {
                println!("\nartifacts in {}", dir.display());
            }
            Ok(report.exit_code())
        }
        Command::Report { dir } => {
            let report = Report::from_dir(&dir).map_err(|e| OmecError::Config(format!("{}: {e}", dir.display())))?;
            print!("{}", report.render());
            Ok(report.exit_code())
        }
        Command::Sweep { flags, seeds, threads } => {
            let seeds = parse_seeds(&seeds)?;
            let mut config = flags.options()?.scenario()?;
            if config.output_dir.is_none() {
                config.output_dir = Some(PathBuf::from(format!("omec-{}-sweep", config.name)));
            }
            let summary = harness::sweep(&config, &seeds, threads)?;
            for (seed, r) in summary.seeds.iter().zip(&summary.reports) {
                let cell = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
                println!(
                    "seed {seed:>4}: uncorrected {} corrected {}{}",
                    cell(r.mean_uncorrected()),
                    cell(r.mean_corrected()),
                    r.failure.as_deref().map(|f| format!("  ({f})")).unwrap_or_default()
                );
            }
            print!("{}", summary.render());
            Ok(summary.exit_code())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("omec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
