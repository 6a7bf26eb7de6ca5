//! Corrects the wrong observation function of the Lorenz-63 twin experiment.
//!
//! The data come from `h(x) = [sin x1, x2 - 6, cos x3]` but the filter is
//! told `g(x) = x`. Each iteration filters with `g + b` and re-estimates `b`.
//!
//! Run: cargo run --release --example lorenz63_correction [-- STEPS ITERATIONS [OUT_DIR]]

use omec::harness::{preset, run_scenario, Report};

fn main() -> omec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = preset("l63")?;
    config.steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(3000);
    config.omec.max_iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    config.output_dir = args.get(2).map(Into::into);

    let report = run_scenario(&config)?;
    print!("{}", report.render());

    // Every number above can be rebuilt from the files alone.
    if let Some(dir) = &config.output_dir {
        let again = Report::from_dir(dir)?;
        assert_eq!(again.rmse_corrected, report.rmse_corrected);
        println!("\nre-read {} from disk", dir.display());
    }
    Ok(())
}
