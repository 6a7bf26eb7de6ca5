//! Kernel regression over delay coordinates, with no state in sight.
//!
//! A noisy scalar signal is embedded with two delays and every sample is
//! replaced by a kernel average over its nearest delay-space neighbors. The
//! sample itself is its own nearest neighbor at distance zero and keeps the
//! largest weight, so smoothing removes only part of the noise.

use nalgebra::DMatrix;
use omec::dynamics::ObservationSeries;
use omec::observation::{neighbor_weights, DelayIndex, NeighborTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> omec::Result<()> {
    let t = 20000;
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clean: Vec<f64> = (0..t).map(|k| (0.07 * k as f64).sin() + 0.5 * (0.19 * k as f64).cos()).collect();
    let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
    let obs = ObservationSeries::new(DMatrix::from_column_slice(t, 1, &noisy), 1.0, DMatrix::identity(1, 1))?;

    let index = DelayIndex::build(&obs, 2)?;
    let hits = index.knn(500, 5)?;
    println!("neighbors of step 500: {:?}", hits.indices);
    println!("their weights: {:.3?}", neighbor_weights(&hits.distances));

    let table = NeighborTable::build(&index, 100)?;
    let smooth = table.smooth_series(&noisy);
    let rms = |a: &[f64]| {
        let s = a[2..].iter().zip(&clean[2..]).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        (s / (t - 2) as f64).sqrt()
    };
    println!("error of raw samples {:.3}, of smoothed values {:.3}", rms(&noisy), rms(&smooth));
    Ok(())
}
