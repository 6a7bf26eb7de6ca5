use nalgebra::{DMatrix, DVector};

use crate::error::{OmecError, Result};

/// Per-component root mean square of `estimate - truth` over rows
/// `spin_up..`.
pub fn rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>, spin_up: usize) -> Result<DVector<f64>> {
    if estimate.shape() != truth.shape() {
        return Err(OmecError::DimensionMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let t = estimate.nrows();
    if spin_up >= t {
        return Err(OmecError::InvalidArgument(format!(
            "spin-up of {spin_up} leaves nothing of {t} steps"
        )));
    }
    let count = (t - spin_up) as f64;
    Ok(DVector::from_iterator(
        estimate.ncols(),
        (0..estimate.ncols()).map(|j| {
            let ss = (spin_up..t).map(|k| (estimate[(k, j)] - truth[(k, j)]).powi(2)).sum::<f64>();
            (ss / count).sqrt()
        }),
    ))
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        let truth = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rmse(&truth, &truth, 0).unwrap().as_slice(), &[0.0, 0.0]);
        let shifted = truth.map(|v| v - 2.5);
        assert_eq!(rmse(&shifted, &truth, 0).unwrap().as_slice(), &[2.5, 2.5]);
        let est = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(rmse(&est, &DMatrix::zeros(2, 1), 0).unwrap()[0], 1.0);
        assert_eq!(rmse(&est, &DMatrix::zeros(2, 1), 1).unwrap()[0], 1.0);
        assert!(rmse(&est, &DMatrix::zeros(2, 2), 0).is_err());
        assert!(rmse(&est, &DMatrix::zeros(2, 1), 2).is_err());
    }

    #[test]
    fn correlation_of_affine_copy_is_one() {
        let a = [1.0, 2.0, 5.0, -1.0];
        let b = a.map(|v| 3.0 * v - 7.0);
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-14);
    }
}
