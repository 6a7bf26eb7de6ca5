//! A small seed sweep run in parallel, with mean and spread of the RMSE.
//! `OMEC_THREADS` caps the number of workers.
//!
//! Run: cargo run --release --example seed_sweep [-- OUT_DIR]

use omec::harness::{preset, sweep};

fn main() -> omec::Result<()> {
    let mut config = preset("l63")?;
    config.steps = 1500;
    config.omec.max_iterations = 4;
    config.output_dir = std::env::args().nth(1).map(Into::into);

    let summary = sweep(&config, &[1, 2, 3, 4], None)?;
    print!("{}", summary.render());
    Ok(())
}
