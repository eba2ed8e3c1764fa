//! Duality pairings on coefficient space.
//!
//! A pairing is a nondegenerate bilinear form `<w, v> = w^T P v`. Adjoints of
//! linear operators depend on the pairing: with respect to `P` the adjoint of
//! `B` is `P^{-T} B^T P^T`. Two pairings `L` and `R` related by
//! `<w, v>_L = <w, P v>_R` have adjoints related by the similarity
//! `B^{*L} = (P^{*R})^{-1} B^{*R} P^{*R}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, Factorized, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingKind {
    /// Euclidean dot product.
    Standard,
    /// `w^T M v` with `M` the mass matrix of a semi-discretization.
    #[serde(alias = "mass")]
    MassInduced,
    /// `w^T P v` for an arbitrary invertible `P`.
    General,
}

impl fmt::Display for PairingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PairingKind::Standard => "standard",
            PairingKind::MassInduced => "mass",
            PairingKind::General => "general",
        };
        f.write_str(s)
    }
}

/// A duality pairing stored by its defining matrix and its LU factorization.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct DualityPairing {
    kind: PairingKind,
    defining: Factorized,
}

impl DualityPairing {
    pub fn standard(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("pairing dimension must be positive".into()));
        }
        Ok(Self {
            kind: PairingKind::Standard,
            defining: Factorized::new(Matrix::identity(dim, dim), "standard pairing")?,
        })
    }

    pub fn mass_induced(mass: Matrix) -> Result<Self> {
        Self::with_kind(PairingKind::MassInduced, mass)
    }

    pub fn general(p: Matrix) -> Result<Self> {
        Self::with_kind(PairingKind::General, p)
    }

    fn with_kind(kind: PairingKind, m: Matrix) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("pairing dimension must be positive".into()));
        }
        Ok(Self {
            kind,
            defining: Factorized::new(m, "pairing matrix")?,
        })
    }

    pub fn kind(&self) -> PairingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.defining.dim()
    }

    /// The defining matrix (`I`, `M` or `P`).
    pub fn matrix(&self) -> &Matrix {
        self.defining.matrix()
    }

    pub fn rcond(&self) -> f64 {
        self.defining.rcond()
    }

    pub fn is_standard(&self) -> bool {
        self.kind == PairingKind::Standard
    }

    /// `w^T P v`
    pub fn pair(&self, w: &Vector, v: &Vector) -> Result<f64> {
        check_dim("pair: left argument", self.dim(), w.len())?;
        check_dim("pair: right argument", self.dim(), v.len())?;
        Ok(self.pair_unchecked(w, v))
    }

    pub(crate) fn pair_unchecked(&self, w: &Vector, v: &Vector) -> f64 {
        if self.is_standard() {
            w.dot(v)
        } else {
            w.dot(&(self.matrix() * v))
        }
    }

    /// Adjoint of `b` with respect to this pairing, `P^{-T} B^T P^T`.
    ///
    /// Routed through [`operator_adjoint`] with the standard pairing on the
    /// right, so every pairing shares one implementation.
    pub fn adjoint_of(&self, b: &Matrix) -> Result<Matrix> {
        let standard = DualityPairing::standard(self.dim())?;
        operator_adjoint(self, &standard, b, &b.transpose())
    }

    /// Applies `P^T` to a covector. Pulls a covector of this pairing back to
    /// the standard pairing.
    pub fn to_standard(&self, p: &Vector) -> Vector {
        if self.is_standard() {
            p.clone()
        } else {
            self.matrix().tr_mul(p)
        }
    }

    /// Applies `P^{-T}`, the inverse of [`to_standard`](Self::to_standard).
    pub fn from_standard(&self, z: &Vector) -> Vector {
        if self.is_standard() {
            z.clone()
        } else {
            self.defining.solve_transpose(z)
        }
    }

    /// Applies the adjoint of a linear map with respect to this pairing, given
    /// the action of its standard adjoint (transpose).
    pub fn apply_adjoint<F>(&self, p: &Vector, transpose_action: F) -> Vector
    where
        F: FnOnce(&Vector) -> Vector,
    {
        let z = self.to_standard(p);
        self.from_standard(&transpose_action(&z))
    }
}

/// Adjoint of `b` with respect to `pairing_l`, given its adjoint
/// `b_adjoint_r` with respect to `pairing_r`.
///
/// With `<w, v>_L = <w, P v>_R` the result is
/// `(P^{*R})^{-1} B^{*R} P^{*R}`, where `P = R^{-1} L` in terms of the
/// defining matrices.
pub fn operator_adjoint(
    pairing_l: &DualityPairing,
    pairing_r: &DualityPairing,
    b: &Matrix,
    b_adjoint_r: &Matrix,
) -> Result<Matrix> {
    let n = pairing_l.dim();
    check_dim("operator_adjoint: pairings", n, pairing_r.dim())?;
    check_dim("operator_adjoint: operator rows", n, b.nrows())?;
    check_dim("operator_adjoint: operator columns", n, b.ncols())?;
    check_dim("operator_adjoint: adjoint rows", n, b_adjoint_r.nrows())?;
    check_dim("operator_adjoint: adjoint columns", n, b_adjoint_r.ncols())?;

    let p = relating_operator(pairing_l, pairing_r)?;
    let p_adj = adjoint_wrt(pairing_r, &p);
    let p_adj = Factorized::new(p_adj, "relating operator adjoint")?;
    Ok(p_adj.solve_matrix(&(b_adjoint_r * p_adj.matrix())))
}

/// The operator `P` with `<w, v>_L = <w, P v>_R`, i.e. `R^{-1} L`.
pub fn relating_operator(pairing_l: &DualityPairing, pairing_r: &DualityPairing) -> Result<Matrix> {
    check_dim("relating_operator", pairing_l.dim(), pairing_r.dim())?;
    if pairing_r.is_standard() {
        return Ok(pairing_l.matrix().clone());
    }
    let p = pairing_r.defining.solve_matrix(pairing_l.matrix());
    Ok(p)
}

/// Direct adjoint with respect to a single pairing: `R^{-T} B^T R^T`.
pub(crate) fn adjoint_wrt(pairing: &DualityPairing, b: &Matrix) -> Matrix {
    if pairing.is_standard() {
        return b.transpose();
    }
    let r = pairing.matrix();
    pairing.defining.solve_transpose_matrix(&(b.transpose() * r.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn standard_pair_is_dot() {
        let s = DualityPairing::standard(2).unwrap();
        assert_eq!(s.pair(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
    }

    #[test]
    fn general_pair() {
        let p = DualityPairing::general(matrix(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(p.pair(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn mass_pair() {
        let m = DualityPairing::mass_induced(Matrix::from_diagonal(&v(&[2.0, 1.0]))).unwrap();
        assert_eq!(m.pair(&v(&[1.0, 1.0]), &v(&[1.0, 1.0])).unwrap(), 3.0);
    }

    #[test]
    fn pair_dimension_error_names_dims() {
        let s = DualityPairing::standard(2).unwrap();
        let err = s.pair(&v(&[1.0, 2.0, 3.0]), &v(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn singular_pairing_rejected() {
        let err = DualityPairing::general(matrix(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        assert!(matches!(err, Err(Error::Singular { .. })));
        let err = DualityPairing::general(matrix(2, 2, vec![1.0, 0.0, 0.0, 1e-17]).unwrap());
        assert!(matches!(err, Err(Error::Singular { .. })));
    }

    #[test]
    fn standard_adjoint_is_transpose() {
        let s = DualityPairing::standard(3).unwrap();
        let b = matrix(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(s.adjoint_of(&b).unwrap(), b.transpose());
    }

    #[test]
    fn mass_adjoint_hand_example() {
        let m = DualityPairing::mass_induced(Matrix::from_diagonal(&v(&[2.0, 1.0]))).unwrap();
        let b = matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let adj = m.adjoint_of(&b).unwrap();
        let expected = matrix(2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_relative_eq!(adj, expected, epsilon = 1e-15);
        // pair_M(B* e_i, e_j) = pair_M(e_i, B e_j) on all basis pairs
        for i in 0..2 {
            for j in 0..2 {
                let ei = Vector::from_fn(2, |k, _| (k == i) as u8 as f64);
                let ej = Vector::from_fn(2, |k, _| (k == j) as u8 as f64);
                let lhs = m.pair(&(&adj * &ei), &ej).unwrap();
                let rhs = m.pair(&ei, &(&b * &ej)).unwrap();
                assert_relative_eq!(lhs, rhs, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn equal_pairings_keep_adjoint() {
        let p = DualityPairing::general(matrix(2, 2, vec![3.0, 1.0, 0.5, 2.0]).unwrap()).unwrap();
        let b = matrix(2, 2, vec![1.0, -2.0, 0.3, 4.0]).unwrap();
        let b_adj = p.adjoint_of(&b).unwrap();
        let same = operator_adjoint(&p, &p, &b, &b_adj).unwrap();
        assert_relative_eq!(same, b_adj, epsilon = 1e-13);
    }

    #[test]
    fn singular_relating_operator() {
        // Relating operators inherit invertibility from the pairings, so a
        // singular relation can only come from a degenerate adjoint input; the
        // gate sits in Factorized.
        let m = matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(Factorized::new(m, "x"), Err(Error::Singular { .. })));
    }

    fn random_invertible(n: usize, seed: &[f64]) -> Matrix {
        // diagonally dominant, hence invertible
        let mut m = Matrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        for i in 0..n {
            let row: f64 = m.row(i).iter().map(|x| x.abs()).sum();
            m[(i, i)] += row + 1.0;
        }
        m
    }

    proptest! {
        #[test]
        fn bilinearity(
            a in -3.0f64..3.0,
            data in proptest::collection::vec(-1.0f64..1.0, 4 * 4 + 12),
        ) {
            let n = 4;
            let pm = random_invertible(n, &data[..16]);
            let p = DualityPairing::general(pm).unwrap();
            let w1 = Vector::from_row_slice(&data[16..20]);
            let w2 = Vector::from_row_slice(&data[20..24]);
            let vv = Vector::from_row_slice(&data[24..28]);
            let lhs = p.pair(&(&w1 * a + &w2), &vv).unwrap();
            let rhs = a * p.pair(&w1, &vv).unwrap() + p.pair(&w2, &vv).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let lhs = p.pair(&vv, &(&w1 * a + &w2)).unwrap();
            let rhs = a * p.pair(&vv, &w1).unwrap() + p.pair(&vv, &w2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn adjoint_identity_and_involution(
            data in proptest::collection::vec(-1.0f64..1.0, 3 * 9 + 6),
        ) {
            let n = 3;
            let pm = random_invertible(n, &data[..9]);
            let b = Matrix::from_row_slice(n, n, &data[9..18]);
            let w = Vector::from_row_slice(&data[27..30]);
            let vv = Vector::from_row_slice(&data[30..33]);
            let m = random_invertible(n, &data[18..27]);
            let m = &m + m.transpose();
            for pairing in [
                DualityPairing::standard(n).unwrap(),
                DualityPairing::mass_induced(m).unwrap(),
                DualityPairing::general(pm.clone()).unwrap(),
            ] {
                let adj = pairing.adjoint_of(&b).unwrap();
                let lhs = pairing.pair(&(&adj * &w), &vv).unwrap();
                let rhs = pairing.pair(&w, &(&b * &vv)).unwrap();
                let scale = b.norm() * w.norm() * vv.norm() * pairing.matrix().norm();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-300));

                // For a non-symmetric P the adjoint of the adjoint is taken
                // with respect to the swapped form, whose matrix is P^T.
                let swapped = DualityPairing::general(pairing.matrix().transpose()).unwrap();
                let back = swapped.adjoint_of(&adj).unwrap();
                for (x, y) in back.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()) * pairing.matrix().norm().max(1.0));
                }
            }
        }

        #[test]
        fn relating_operator_self_adjoint_across_pairings(
            data in proptest::collection::vec(-1.0f64..1.0, 18),
        ) {
            // P^{*L} = P^{*R}
            let n = 3;
            let l = DualityPairing::general(random_invertible(n, &data[..9])).unwrap();
            let r = DualityPairing::general(random_invertible(n, &data[9..])).unwrap();
            let p = relating_operator(&l, &r).unwrap();
            let p_l = adjoint_wrt(&l, &p);
            let p_r = adjoint_wrt(&r, &p);
            for (x, y) in p_l.iter().zip(p_r.iter()) {
                prop_assert!((x - y).abs() <= 1e-11 * (1.0 + y.abs()));
            }
        }
    }
}
