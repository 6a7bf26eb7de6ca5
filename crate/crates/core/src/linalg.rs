//! Small dense linear-algebra helpers shared by the filter and the diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{OmecError, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute difference between `m` and its transpose.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(OmecError::InvalidCovariance(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(OmecError::InvalidCovariance(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Tolerance used to decide whether an input covariance is "symmetric enough".
pub(crate) fn symmetry_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + m.amax())
}

/// Symmetric positive semidefinite square root of `cov` together with the
/// smallest eigenvalue seen before negative eigenvalues were clipped to zero.
pub(crate) fn psd_sqrt(cov: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let mut sym = cov.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&roots);
    let mut s = scaled * v.transpose();
    symmetrize(&mut s);
    (s, min_eig)
}

/// Symmetrizes `m` and raises every eigenvalue to at least `floor`.
pub(crate) fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let n = sym.nrows();
    let mut shifted = sym.clone();
    for i in 0..n {
        shifted[(i, i)] -= floor;
    }
    if shifted.cholesky().is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    symmetrize(&mut out);
    out
}

/// Solves `a x = b` for symmetric positive definite `a`. On a failed
/// factorization, retries once with `1e-10 * trace(a) / dim` added to the
/// diagonal.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let n = a.nrows();
    let jitter = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut conditioned = a.clone();
    for i in 0..n {
        conditioned[(i, i)] += jitter;
    }
    conditioned
        .cholesky()
        .map(|ch| ch.solve(b))
        .ok_or_else(|| OmecError::NumericalFailure("matrix is not positive definite".into()))
}

/// Least-squares / minimum-norm solve of `a x = b`. Square systems go through
/// LU first; singular or rectangular ones fall back to an SVD pseudo-inverse.
pub(crate) fn general_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.is_square() {
        if let Some(x) = a.clone().lu().solve(b) {
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Least-squares solve through the SVD, discarding singular values below
/// `rcond` times the largest.
pub(crate) fn truncated_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = rcond * svd.singular_values.max();
    if !(eps > 0.0) {
        return None;
    }
    svd.solve(b, eps).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Inverse of a symmetric PSD matrix, falling back to the pseudo-inverse.
pub(crate) fn sym_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.inverse();
    }
    let n = a.nrows();
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let cutoff = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&inv) * v.transpose();
    debug_assert_eq!(out.nrows(), n);
    out
}
