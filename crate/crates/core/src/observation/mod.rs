//! Observation functions, delay-coordinate neighbor search and the kernel
//! smoothing used to build observation-error corrections.

mod delay;
mod smoothing;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{OmecError, Result};

pub use delay::{DelayIndex, LocalizedDelayIndex, Neighbors};
pub use smoothing::{localized_smooth, neighbor_weights, smooth_residuals, CorrectionTable, NeighborTable, Smoother};

/// Anything the filter can use to map a state to observation space at a
/// given time step.
pub trait ObservationOperator: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_at(&self, step: usize, x: &[f64], out: &mut [f64]);
}

/// Scalar map applied to one state component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementaryMap {
    Identity,
    Sin,
    Cos,
    /// `x + offset`
    Shift(f64),
    /// `scale * x + offset`
    Affine { scale: f64, offset: f64 },
}

impl ElementaryMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ElementaryMap::Identity => x,
            ElementaryMap::Sin => x.sin(),
            ElementaryMap::Cos => x.cos(),
            ElementaryMap::Shift(c) => x + c,
            ElementaryMap::Affine { scale, offset } => scale * x + offset,
        }
    }
}

pub type CustomObservation = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A time-independent observation function `x -> y`.
#[derive(Clone)]
pub enum ObservationFunction {
    Identity { dim: usize },
    Componentwise(Vec<ElementaryMap>),
    Linear(DMatrix<f64>),
    Custom {
        input_dim: usize,
        output_dim: usize,
        f: CustomObservation,
    },
}

impl fmt::Debug for ObservationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationFunction::Identity { dim } => write!(f, "Identity({dim})"),
            ObservationFunction::Componentwise(maps) => f.debug_tuple("Componentwise").field(maps).finish(),
            ObservationFunction::Linear(c) => write!(f, "Linear({}x{})", c.nrows(), c.ncols()),
            ObservationFunction::Custom {
                input_dim,
                output_dim,
                ..
            } => write!(f, "Custom({input_dim} -> {output_dim})"),
        }
    }
}

impl ObservationFunction {
    pub fn identity(dim: usize) -> Self {
        ObservationFunction::Identity { dim }
    }

    /// `[sin x1, x2 - 6, cos x3]`, the map that generates the Lorenz-63 data.
    pub fn lorenz63_true() -> Self {
        ObservationFunction::Componentwise(vec![ElementaryMap::Sin, ElementaryMap::Shift(-6.0), ElementaryMap::Cos])
    }

    /// Circulant ring operator: node `i` observes
    /// `center * x_i + right * x_{i+1} + left * x_{i-1}` (indices cyclic).
    pub fn circulant_ring(k: usize, center: f64, right: f64, left: f64) -> Result<Self> {
        if k < 3 {
            return Err(OmecError::InvalidArgument(format!("ring needs at least 3 nodes, got {k}")));
        }
        let mut c = DMatrix::zeros(k, k);
        for i in 0..k {
            c[(i, i)] += center;
            c[(i, (i + 1) % k)] += right;
            c[(i, (i + k - 1) % k)] += left;
        }
        Ok(ObservationFunction::Linear(c))
    }

    pub fn custom(input_dim: usize, output_dim: usize, f: CustomObservation) -> Self {
        ObservationFunction::Custom {
            input_dim,
            output_dim,
            f,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ObservationFunction::Identity { dim } => *dim,
            ObservationFunction::Componentwise(maps) => maps.len(),
            ObservationFunction::Linear(c) => c.ncols(),
            ObservationFunction::Custom { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ObservationFunction::Identity { dim } => *dim,
            ObservationFunction::Componentwise(maps) => maps.len(),
            ObservationFunction::Linear(c) => c.nrows(),
            ObservationFunction::Custom { output_dim, .. } => *output_dim,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ObservationFunction::Identity { .. } => out.copy_from_slice(x),
            ObservationFunction::Componentwise(maps) => {
                for ((o, &xi), map) in out.iter_mut().zip(x).zip(maps) {
                    *o = map.apply(xi);
                }
            }
            ObservationFunction::Linear(c) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = c.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            ObservationFunction::Custom { f, .. } => f(x, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_dim());
        self.eval_into(x, out.as_mut_slice());
        out
    }

    /// Applies the function to every row of `states`.
    pub fn eval_rows(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.output_dim();
        let mut out = DMatrix::zeros(states.nrows(), m);
        let mut x = vec![0.0; states.ncols()];
        let mut y = vec![0.0; m];
        for k in 0..states.nrows() {
            for (j, v) in x.iter_mut().enumerate() {
                *v = states[(k, j)];
            }
            self.eval_into(&x, &mut y);
            for (j, v) in y.iter().enumerate() {
                out[(k, j)] = *v;
            }
        }
        out
    }
}

impl ObservationOperator for ObservationFunction {
    fn input_dim(&self) -> usize {
        ObservationFunction::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        ObservationFunction::output_dim(self)
    }

    fn eval_at(&self, _step: usize, x: &[f64], out: &mut [f64]) {
        self.eval_into(x, out)
    }
}

/// `g(x) + b_k`: a base observation function plus a per-time-step correction
/// shared by every ensemble member at that step.
#[derive(Debug, Clone)]
pub struct CorrectedObservationFunction {
    pub base: ObservationFunction,
    /// One row per time step, `output_dim` columns.
    pub corrections: DMatrix<f64>,
}

impl CorrectedObservationFunction {
    pub fn new(base: ObservationFunction, corrections: DMatrix<f64>) -> Result<Self> {
        if corrections.ncols() != base.output_dim() {
            return Err(OmecError::DimensionMismatch(format!(
                "corrections have {} columns, observation function has {} outputs",
                corrections.ncols(),
                base.output_dim()
            )));
        }
        Ok(CorrectedObservationFunction { base, corrections })
    }

    pub fn correction(&self, step: usize) -> DVector<f64> {
        self.corrections.row(step).transpose()
    }

    pub fn eval(&self, step: usize, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.base.output_dim());
        self.eval_at(step, x, out.as_mut_slice());
        out
    }
}

impl ObservationOperator for CorrectedObservationFunction {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }

    fn eval_at(&self, step: usize, x: &[f64], out: &mut [f64]) {
        assert!(
            step < self.corrections.nrows(),
            "corrected observation evaluated at step {step} outside its table"
        );
        self.base.eval_into(x, out);
        for (j, o) in out.iter_mut().enumerate() {
            *o += self.corrections[(step, j)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz63_map() {
        let h = ObservationFunction::lorenz63_true();
        let y = h.eval(&[0.5, 10.0, 2.0]);
        assert_eq!(y.as_slice(), &[0.5f64.sin(), 4.0, 2.0f64.cos()]);
    }

    #[test]
    fn circulant_rows() {
        let ObservationFunction::Linear(c) = ObservationFunction::circulant_ring(40, 1.0, 1.2, 1.1).unwrap() else {
            unreachable!()
        };
        // zero-based row 4 is node 5
        let nz = (0..40).filter(|&j| c[(4, j)] != 0.0).map(|j| (j, c[(4, j)])).collect::<Vec<_>>();
        assert_eq!(nz, vec![(3, 1.1), (4, 1.0), (5, 1.2)]);
        assert_eq!(c[(0, 39)], 1.1);
        assert_eq!(c[(39, 0)], 1.2);
    }

    #[test]
    fn correction_is_added_per_step() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let g = CorrectedObservationFunction::new(ObservationFunction::identity(2), corr).unwrap();
        assert_eq!(g.eval(0, &[1.0, 1.0]).as_slice(), &[2.0, 3.0]);
        assert_eq!(g.eval(1, &[1.0, 1.0]).as_slice(), &[0.0, 1.5]);
    }

    #[test]
    fn correction_width_is_checked() {
        assert!(CorrectedObservationFunction::new(ObservationFunction::identity(3), DMatrix::zeros(4, 2)).is_err());
    }
}
