//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub(crate) fn check_dim(context: &'static str, v: &Vector, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &'static str, v: &Vector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Solves `m x = rhs` for a symmetric positive definite `m`, falling back to
/// LU when Cholesky fails on a numerically borderline matrix.
pub fn solve_spd(m: &Matrix, rhs: &Vector, context: &'static str) -> Result<Vector> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    m.clone().lu().solve(rhs).ok_or(Error::Singular(context))
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn sym_eig_range(m: &Matrix) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Builds the matrix of a linear map from its action on the unit vectors.
pub fn materialize(rows: usize, cols: usize, mut apply: impl FnMut(&Vector) -> Vector) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    let mut e = Vector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        let col = apply(&e);
        m.set_column(j, &col);
        e[j] = 0.0;
    }
    m
}

/// Mean of `entries` with an explicit divisor; absent entries count as zero.
pub fn mean_with_divisor<'a>(entries: impl IntoIterator<Item = &'a Vector>, divisor: usize, dim: usize) -> Vector {
    let mut acc = Vector::zeros(dim);
    for e in entries {
        acc += e;
    }
    acc / divisor as f64
}
