//! Dense linear algebra plumbing on top of `nalgebra`.
//!
//! Coefficient spaces are small (a few thousand unknowns at most), so every
//! matrix is dense and every factorization is a partial-pivoting LU.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-14;

/// Builds a vector, rejecting NaN/Inf entries.
pub fn vector(values: Vec<f64>) -> Result<Vector> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vector"));
    }
    Ok(Vector::from_vec(values))
}

/// Builds a matrix from row-major data, rejecting NaN/Inf and ragged input.
pub fn matrix(rows: usize, cols: usize, row_major: Vec<f64>) -> Result<Matrix> {
    if row_major.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "matrix data length",
            left: rows * cols,
            right: row_major.len(),
        });
    }
    if row_major.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(Matrix::from_row_slice(rows, cols, &row_major))
}

pub fn ensure_finite_vector(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_finite_matrix(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_dim(context: &'static str, left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            left,
            right,
        })
    }
}

pub fn norm_inf(v: &Vector) -> f64 {
    v.amax()
}

pub fn norm_one_matrix(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorizations of a square matrix and of its transpose.
///
/// Both are kept because adjoint computations need `A^{-1} x` and
/// `A^{-T} x` in roughly equal measure.
#[derive(Debug, Clone)]
pub struct Factorized {
    matrix: Matrix,
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
    rcond: f64,
}

impl Factorized {
    pub fn new(matrix: Matrix, context: &'static str) -> Result<Self> {
        check_dim(context, matrix.nrows(), matrix.ncols())?;
        ensure_finite_matrix(&matrix, context)?;
        let lu = matrix.clone().lu();
        let lu_t = matrix.transpose().lu();
        let rcond = match lu.try_inverse() {
            Some(inv) if inv.iter().all(|x| x.is_finite()) => {
                let denom = norm_one_matrix(&matrix) * norm_one_matrix(&inv);
                if denom > 0.0 && denom.is_finite() {
                    1.0 / denom
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        if !(rcond >= RCOND_THRESHOLD) {
            return Err(Error::Singular { context, rcond });
        }
        Ok(Self {
            matrix,
            lu,
            lu_t,
            rcond,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Reciprocal 1-norm condition number.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// `A^{-1} b`
    pub fn solve(&self, b: &Vector) -> Vector {
        self.lu
            .solve(b)
            .expect("factorization was checked to be nonsingular")
    }

    /// `A^{-T} b`
    pub fn solve_transpose(&self, b: &Vector) -> Vector {
        self.lu_t
            .solve(b)
            .expect("factorization was checked to be nonsingular")
    }

    /// `A^{-1} B`
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        self.lu
            .solve(b)
            .expect("factorization was checked to be nonsingular")
    }

    /// `A^{-T} B`
    pub fn solve_transpose_matrix(&self, b: &Matrix) -> Matrix {
        self.lu_t
            .solve(b)
            .expect("factorization was checked to be nonsingular")
    }
}

/// Solves `A x = b` once, returning a singularity error instead of panicking.
pub fn solve_once(a: Matrix, b: &Vector, context: &'static str) -> Result<Vector> {
    let lu = a.lu();
    lu.solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::Singular { context, rcond: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan() {
        assert!(matches!(vector(vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(
            matrix(1, 2, vec![1.0, f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn ragged_matrix_data() {
        assert!(matches!(
            matrix(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_rejected() {
        let m = matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(
            Factorized::new(m, "test"),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn transpose_solve() {
        let m = matrix(2, 2, vec![2.0, 1.0, 0.0, 3.0]).unwrap();
        let f = Factorized::new(m.clone(), "test").unwrap();
        let b = Vector::from_vec(vec![1.0, 2.0]);
        let x = f.solve_transpose(&b);
        assert!((m.transpose() * x - b).amax() < 1e-15);
    }
}
