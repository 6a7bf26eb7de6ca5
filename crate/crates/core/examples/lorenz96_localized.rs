//! Forty-node Lorenz-96 ring observed through a circulant mixing of each node
//! with its neighbors. Neighbor search is localized: every node gets its own
//! delay space built from itself and its two ring neighbors.
//!
//! Run: cargo run --release --example lorenz96_localized [-- STEPS ITERATIONS]

use omec::harness::{preset, run_scenario};

fn main() -> omec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = preset("l96_40")?;
    config.steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    config.omec.max_iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);

    let report = run_scenario(&config)?;
    for r in &report.iterations {
        let mean = r.rmse.as_ref().map_or(f64::NAN, |e| e.mean());
        println!("iteration {:2}: node-average RMSE {mean:.3}", r.iteration);
    }
    if let (Some(u), Some(c)) = (report.mean_uncorrected(), report.mean_corrected()) {
        println!("{u:.3} -> {c:.3} ({:.0}% of uncorrected)", 100.0 * c / u);
    }
    Ok(())
}
