//! The adaptive filter learning an unknown observation-noise level.
//!
//! A slowly decaying scalar is observed with noise of variance 2 while the
//! filter starts from R = 0.1 and Q = 0.1. The running estimates settle near
//! the true values.

use std::sync::Arc;

use nalgebra::DMatrix;
use omec::dynamics::{generate_truth, observe, ModelSpec, VectorField};
use omec::enkf::{run_filter, FilterConfig, NoiseInit};
use omec::observation::ObservationFunction;

struct Decay;

impl VectorField for Decay {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = -0.1 * x[0];
    }
}

fn main() -> omec::Result<()> {
    let model = ModelSpec::custom("decay", Arc::new(Decay), 0.1, 1).with_process_noise(DMatrix::from_element(1, 1, 0.01));
    let truth = generate_truth(&model, 5000, 100, 11)?;
    let id = ObservationFunction::identity(1);
    let obs = observe(&truth, &id, &DMatrix::from_element(1, 1, 2.0), 12)?;

    let mut config = FilterConfig::new(1);
    config.r_init = NoiseInit::Fixed(DMatrix::from_element(1, 1, 0.1));
    let run = run_filter(&obs, &model, &id, &config)?;
    for k in [0, 10, 100, 1000, 4999] {
        println!("step {k:5}: R {:.3}  Q {:.4}", run.trace_r[k], run.trace_q[k]);
    }
    println!("mean R over the second half: {:.3} (true 2)", run.mean_trace_r(2500));
    Ok(())
}
