//! Semi-discrete adjoint and variational systems.
//!
//! For `q' = g(t, q) = M^{-1}(K q + f(t, q))` and a pairing with defining
//! matrix `P`, the adjoint Hamiltonian is `H(t, q, p) = <p, g(t, q)>_P` and
//! the induced adjoint equation is `p' = -[D_q g]^{*P} p`. With `P = I` this
//! reads `z' = -(K + D_q f)^T M^{-T} z`; with `P = M` it reads
//! `M^T p' = -(K + D_q f)^T p`. The two are related by `z = M^T p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fd_jacobian, VectorField};
use crate::linalg::{check_dim, Factorized, Matrix, Vector};
use crate::pairings::{DualityPairing, PairingKind};
use crate::semidisc::SemiDiscreteOde;

/// Adjoint system of a semi-discrete ODE induced by a duality pairing.
#[derive(Debug, Clone, Copy)]
pub struct AdjointSystem<'a> {
    ode: &'a SemiDiscreteOde,
    pairing: &'a DualityPairing,
}

pub fn form_adjoint<'a>(
    ode: &'a SemiDiscreteOde,
    pairing: &'a DualityPairing,
) -> Result<AdjointSystem<'a>> {
    check_dim("form_adjoint: pairing vs ode", ode.dim(), pairing.dim())?;
    if pairing.kind() == PairingKind::MassInduced {
        let diff = (pairing.matrix() - ode.mass()).amax();
        if diff > 1e-14 * ode.mass().amax() {
            return Err(Error::InvalidArgument(format!(
                "mass-induced pairing does not match the ODE mass matrix (max difference {diff:.3e})"
            )));
        }
    }
    Ok(AdjointSystem { ode, pairing })
}

impl<'a> AdjointSystem<'a> {
    pub fn ode(&self) -> &'a SemiDiscreteOde {
        self.ode
    }

    pub fn pairing(&self) -> &'a DualityPairing {
        self.pairing
    }

    pub fn state_rhs(&self, t: f64, q: &Vector) -> Vector {
        self.ode.rhs(t, q)
    }

    /// `-[D_q g(t, q)]^{*P} p`, applied matrix-free.
    pub fn adjoint_rhs(&self, t: f64, q: &Vector, p: &Vector) -> Vector {
        -self
            .pairing
            .apply_adjoint(p, |z| self.ode.jacobian_transpose_action(t, q, z))
    }

    /// `[D_q g(t, q)]^{*P}` as a matrix.
    pub fn adjoint_operator(&self, t: f64, q: &Vector) -> Result<Matrix> {
        self.pairing.adjoint_of(&self.ode.rhs_jacobian(t, q))
    }

    /// `H(t, q, p) = <p, g(t, q)>_P`
    pub fn hamiltonian(&self, t: f64, q: &Vector, p: &Vector) -> f64 {
        self.pairing.pair_unchecked(p, &self.ode.rhs(t, q))
    }

    /// Variational derivatives of `H` with respect to the pairing, returned as
    /// `(δH/δq, δH/δp)`. Hamilton's equations read `q' = δH/δp`,
    /// `p' = -δH/δq`.
    pub fn hamiltonian_derivatives(&self, t: f64, q: &Vector, p: &Vector) -> (Vector, Vector) {
        (-self.adjoint_rhs(t, q, p), self.state_rhs(t, q))
    }
}

/// The ODE together with its variational equation, as a field on `(y, δy)`.
#[derive(Debug, Clone, Copy)]
pub struct VariationalSystem<F> {
    field: F,
}

pub fn form_variational<F: VectorField>(field: F) -> VariationalSystem<F> {
    VariationalSystem { field }
}

/// `(y, δy)` as one vector of twice the length.
pub fn stack_variational(y: &Vector, dy: &Vector) -> Vector {
    let n = y.len();
    Vector::from_fn(2 * n, |i, _| if i < n { y[i] } else { dy[i - n] })
}

/// Inverse of [`stack_variational`].
pub fn split_variational(state: &Vector) -> (Vector, Vector) {
    let n = state.len() / 2;
    (state.rows(0, n).into_owned(), state.rows(n, n).into_owned())
}

impl<F: VectorField> VariationalSystem<F> {
    pub fn field(&self) -> &F {
        &self.field
    }

    /// `D_y g(t, y) δy`
    pub fn variational_rhs(&self, t: f64, y: &Vector, dy: &Vector) -> Vector {
        self.field.jacobian_action(t, y, dy)
    }

}

impl<F: VectorField> VectorField for VariationalSystem<F> {
    fn dim(&self) -> usize {
        2 * self.field.dim()
    }

    fn eval(&self, t: f64, state: &Vector) -> Vector {
        let (y, dy) = split_variational(state);
        stack_variational(&self.field.eval(t, &y), &self.variational_rhs(t, &y, &dy))
    }

    /// `[[J, 0], [∂(J δy)/∂y, J]]`; the lower-left block uses central
    /// differences since second derivatives are not part of the field
    /// interface.
    fn jacobian(&self, t: f64, state: &Vector) -> Matrix {
        let n = self.field.dim();
        let (y, dy) = split_variational(state);
        let j = self.field.jacobian(t, &y);
        let h = fd_jacobian(|x| self.field.jacobian_action(t, x, &dy), &y, 1e-6);
        let mut out = Matrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&j);
        out.view_mut((n, n), (n, n)).copy_from(&j);
        out.view_mut((n, 0), (n, n)).copy_from(&h);
        out
    }

    fn time_derivative(&self, t: f64, state: &Vector) -> Vector {
        let (y, dy) = split_variational(state);
        let eps = 1e-6 * (1.0 + t.abs());
        let dj = (self.field.jacobian_action(t + eps, &y, &dy)
            - self.field.jacobian_action(t - eps, &y, &dy))
            / (2.0 * eps);
        stack_variational(&self.field.time_derivative(t, &y), &dj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityDirection {
    /// `p = M^{-T} z`
    StandardToMass,
    /// `z = M^T p`
    MassToStandard,
}

/// Maps adjoint coordinates between the standard and mass-induced pairings.
pub fn similarity_transform(
    v: &Vector,
    mass: &Matrix,
    direction: SimilarityDirection,
) -> Result<Vector> {
    check_dim("similarity_transform", mass.nrows(), v.len())?;
    let m = Factorized::new(mass.clone(), "similarity transform")?;
    Ok(match direction {
        SimilarityDirection::StandardToMass => m.solve_transpose(v),
        SimilarityDirection::MassToStandard => mass.tr_mul(v),
    })
}

/// `<p, δq>` in the given pairing; conserved along adjoint/variational pairs.
pub fn pairing_invariant(pairing: &DualityPairing, p: &Vector, dq: &Vector) -> Result<f64> {
    pairing.pair(p, dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;
    use crate::semidisc::{assemble_galerkin, BoundaryCondition, EvolutionProblem, InitialProfile};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn heat_one_node() -> SemiDiscreteOde {
        let p = EvolutionProblem::heat(1.0, BoundaryCondition::DirichletZero, InitialProfile::Constant { value: 1.0 }).unwrap();
        assemble_galerkin(&p, 2).unwrap().1
    }

    #[test]
    fn linear_standard_adjoint_is_minus_transpose() {
        let k = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let ode = SemiDiscreteOde::linear_system(Matrix::identity(2, 2), k.clone()).unwrap();
        let s = DualityPairing::standard(2).unwrap();
        let sys = form_adjoint(&ode, &s).unwrap();
        let p = v(&[0.3, -1.1]);
        assert_relative_eq!(sys.adjoint_rhs(0.0, &v(&[0.0, 0.0]), &p), -(k.transpose() * &p), epsilon = 1e-15);
    }

    #[test]
    fn heat_scalar_mass_and_standard() {
        let ode = heat_one_node();
        let m = DualityPairing::mass_induced(ode.mass().clone()).unwrap();
        let s = DualityPairing::standard(1).unwrap();
        let q = v(&[0.4]);
        let p = v(&[2.0]);
        let rhs_m = form_adjoint(&ode, &m).unwrap().adjoint_rhs(0.0, &q, &p);
        let rhs_s = form_adjoint(&ode, &s).unwrap().adjoint_rhs(0.0, &q, &p);
        assert_relative_eq!(rhs_m[0], 24.0, epsilon = 1e-12);
        assert_relative_eq!(rhs_s[0], 24.0, epsilon = 1e-12);
    }

    #[test]
    fn mass_pairing_must_match_ode() {
        let ode = heat_one_node();
        let wrong = DualityPairing::mass_induced(Matrix::from_element(1, 1, 2.0)).unwrap();
        assert!(form_adjoint(&ode, &wrong).is_err());
        let wrong_dim = DualityPairing::standard(3).unwrap();
        assert!(matches!(form_adjoint(&ode, &wrong_dim), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matrix_and_matrix_free_adjoints_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prob = EvolutionProblem::burgers(0.1, BoundaryCondition::DirichletZero, InitialProfile::Sine { amplitude: 1.0, mode: 1 }).unwrap();
        let (_, ode) = assemble_galerkin(&prob, 8).unwrap();
        let pm = Matrix::from_fn(7, 7, |i, j| if i == j { 3.0 } else { rng.gen_range(-0.3..0.3) });
        for pairing in [
            DualityPairing::standard(7).unwrap(),
            DualityPairing::mass_induced(ode.mass().clone()).unwrap(),
            DualityPairing::general(pm).unwrap(),
        ] {
            let sys = form_adjoint(&ode, &pairing).unwrap();
            let q = Vector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
            let p = Vector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
            let a = sys.adjoint_rhs(0.0, &q, &p);
            let b = -(sys.adjoint_operator(0.0, &q).unwrap() * &p);
            assert!((&a - &b).amax() <= 1e-11 * a.amax().max(1.0));
        }
    }

    #[test]
    fn hamiltonian_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prob = EvolutionProblem::burgers(0.1, BoundaryCondition::Periodic, InitialProfile::Sine { amplitude: 1.0, mode: 2 }).unwrap();
        let (_, ode) = assemble_galerkin(&prob, 6).unwrap();
        for pairing in [
            DualityPairing::standard(6).unwrap(),
            DualityPairing::mass_induced(ode.mass().clone()).unwrap(),
        ] {
            let sys = form_adjoint(&ode, &pairing).unwrap();
            let t = rng.gen_range(0.0..1.0);
            let q = Vector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let p = Vector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let (dq, dp) = sys.hamiltonian_derivatives(t, &q, &p);
            // Euclidean gradients are P^T times the pairing derivatives
            let grad_q = fd_jacobian(|x| Vector::from_element(1, sys.hamiltonian(t, x, &p)), &q, 1e-6);
            let grad_p = fd_jacobian(|x| Vector::from_element(1, sys.hamiltonian(t, &q, x)), &p, 1e-6);
            let expect_q = pairing.matrix().tr_mul(&dq);
            let expect_p = pairing.matrix().tr_mul(&dp);
            for i in 0..6 {
                assert!((grad_q[(0, i)] - expect_q[i]).abs() <= 1e-6 * expect_q.amax().max(1.0));
                assert!((grad_p[(0, i)] - expect_p[i]).abs() <= 1e-6 * expect_p.amax().max(1.0));
            }
        }
    }

    #[test]
    fn variational_rhs_examples() {
        let k = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let ode = SemiDiscreteOde::linear_system(Matrix::from_diagonal(&v(&[2.0, 1.0])), k.clone()).unwrap();
        let var = form_variational(&ode);
        let dq = v(&[1.0, 1.0]);
        let expected = Matrix::from_diagonal(&v(&[0.5, 1.0])) * &k * &dq;
        assert_relative_eq!(var.variational_rhs(0.0, &v(&[5.0, -3.0]), &dq), expected.clone(), epsilon = 1e-15);
        assert_relative_eq!(var.variational_rhs(0.0, &v(&[0.0, 0.0]), &dq), expected, epsilon = 1e-15);

        let sq = FnField::scalar(|y| y * y, |y| 2.0 * y);
        let var = form_variational(&sq);
        assert_eq!(var.variational_rhs(0.0, &v(&[2.0]), &v(&[1.0]))[0], 4.0);
    }

    #[test]
    fn variational_rhs_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prob = EvolutionProblem::burgers(0.1, BoundaryCondition::DirichletZero, InitialProfile::Sine { amplitude: 1.0, mode: 1 }).unwrap();
        let (_, ode) = assemble_galerkin(&prob, 9).unwrap();
        let var = form_variational(&ode);
        for _ in 0..5 {
            let q = Vector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let a = Vector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let b = Vector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
            let c = rng.gen_range(-2.0..2.0);
            let lhs = var.variational_rhs(0.0, &q, &(&a * c + &b));
            let rhs = var.variational_rhs(0.0, &q, &a) * c + var.variational_rhs(0.0, &q, &b);
            assert!((&lhs - &rhs).amax() <= 1e-12 * lhs.amax().max(1.0));
        }
    }

    #[test]
    fn similarity_examples() {
        let id = Matrix::identity(3, 3);
        let z = v(&[1.0, -2.0, 3.0]);
        assert_eq!(similarity_transform(&z, &id, SimilarityDirection::StandardToMass).unwrap(), z);
        let m = Matrix::from_diagonal(&v(&[2.0, 1.0]));
        let p = similarity_transform(&v(&[2.0, 3.0]), &m, SimilarityDirection::StandardToMass).unwrap();
        assert_eq!(p, v(&[1.0, 3.0]));
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.1, 1.0]);
        let z = v(&[0.7, -1.9]);
        let back = similarity_transform(
            &similarity_transform(&z, &m, SimilarityDirection::StandardToMass).unwrap(),
            &m,
            SimilarityDirection::MassToStandard,
        )
        .unwrap();
        assert!((back - z).amax() <= 1e-13);
        assert!(similarity_transform(&v(&[1.0, 1.0]), &Matrix::zeros(2, 2), SimilarityDirection::StandardToMass).is_err());
    }

    #[test]
    fn invariant_examples() {
        let s = DualityPairing::standard(2).unwrap();
        assert_eq!(pairing_invariant(&s, &v(&[1.0, 1.0]), &v(&[1.0, -1.0])).unwrap(), 0.0);
        let m = DualityPairing::mass_induced(Matrix::from_diagonal(&v(&[2.0, 1.0]))).unwrap();
        assert_eq!(pairing_invariant(&m, &v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(pairing_invariant(&m, &v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn standard_trajectory_maps_into_mass_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prob = EvolutionProblem::burgers(0.1, BoundaryCondition::DirichletZero, InitialProfile::Sine { amplitude: 1.0, mode: 1 }).unwrap();
        let (_, ode) = assemble_galerkin(&prob, 10).unwrap();
        let s = DualityPairing::standard(9).unwrap();
        let m = DualityPairing::mass_induced(ode.mass().clone()).unwrap();
        let sys_s = form_adjoint(&ode, &s).unwrap();
        let sys_m = form_adjoint(&ode, &m).unwrap();
        for _ in 0..10 {
            let q = Vector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let z = Vector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let zdot = sys_s.adjoint_rhs(0.0, &q, &z);
            let p = similarity_transform(&z, ode.mass(), SimilarityDirection::StandardToMass).unwrap();
            let pdot = similarity_transform(&zdot, ode.mass(), SimilarityDirection::StandardToMass).unwrap();
            let expected = sys_m.adjoint_rhs(0.0, &q, &p);
            assert!((&pdot - &expected).amax() <= 1e-10 * expected.amax().max(1.0));
        }
    }
}
