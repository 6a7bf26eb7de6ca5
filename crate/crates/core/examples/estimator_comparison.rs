//! Direct smoothing of the residuals against the kernel-weight linear system,
//! on the first iteration's residuals of the Lorenz-63 twin experiment.
//!
//! Run: cargo run --release --example estimator_comparison [-- STEPS]

use nalgebra::DMatrix;
use omec::dynamics::{generate_truth, observe, Lorenz63, ModelSpec};
use omec::enkf::{run_filter, FilterConfig};
use omec::observation::{DelayIndex, ObservationFunction, Smoother};
use omec::omec::{compare_estimators, raw_residuals};

fn main() -> omec::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let model = ModelSpec::lorenz63(Lorenz63::default());
    let truth = generate_truth(&model, steps, 1000, 1)?;
    let obs = observe(&truth, &ObservationFunction::lorenz63_true(), &(DMatrix::identity(3, 3) * 2.0), 101)?;
    let g = ObservationFunction::identity(3);

    let run = run_filter(&obs, &model, &g, &FilterConfig::new(3))?;
    let residuals = raw_residuals(&obs, &g, &run)?;
    let smoother = Smoother::global(&DelayIndex::build(&obs, 2)?, 100)?;
    let cmp = compare_estimators(&smoother, &residuals)?;
    println!("per-component correlation: {:.3?}", cmp.correlations);
    println!("weight system rank deficient: {}", cmp.rank_deficient);
    Ok(())
}
