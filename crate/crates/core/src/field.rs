//! Time-dependent vector fields `y' = g(t, y)` with Jacobian access.

use std::fmt;
use std::sync::Arc;

use crate::linalg::{Matrix, Vector};

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, y: &Vector) -> Vector;

    fn jacobian(&self, t: f64, y: &Vector) -> Matrix;

    fn jacobian_action(&self, t: f64, y: &Vector, v: &Vector) -> Vector {
        self.jacobian(t, y) * v
    }

    /// `[D_y g(t, y)]^T w`
    fn jacobian_transpose_action(&self, t: f64, y: &Vector, w: &Vector) -> Vector {
        self.jacobian(t, y).tr_mul(w)
    }

    /// Partial derivative in `t`. Central differences unless overridden.
    fn time_derivative(&self, t: f64, y: &Vector) -> Vector {
        let eps = 1e-6 * (1.0 + t.abs());
        (self.eval(t + eps, y) - self.eval(t - eps, y)) / (2.0 * eps)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, y: &Vector) -> Vector {
        (**self).eval(t, y)
    }
    fn jacobian(&self, t: f64, y: &Vector) -> Matrix {
        (**self).jacobian(t, y)
    }
    fn jacobian_action(&self, t: f64, y: &Vector, v: &Vector) -> Vector {
        (**self).jacobian_action(t, y, v)
    }
    fn jacobian_transpose_action(&self, t: f64, y: &Vector, w: &Vector) -> Vector {
        (**self).jacobian_transpose_action(t, y, w)
    }
    fn time_derivative(&self, t: f64, y: &Vector) -> Vector {
        (**self).time_derivative(t, y)
    }
}

type FieldFn = dyn Fn(f64, &Vector) -> Vector + Send + Sync;
type JacobianFn = dyn Fn(f64, &Vector) -> Matrix + Send + Sync;

/// A vector field given by closures.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    f: Arc<FieldFn>,
    jac: Arc<JacobianFn>,
}

impl FnField {
    pub fn new<F, J>(dim: usize, f: F, jac: J) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        J: Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    {
        Self {
            dim,
            f: Arc::new(f),
            jac: Arc::new(jac),
        }
    }

    /// `y' = A y`
    pub fn linear(a: Matrix) -> Self {
        let n = a.nrows();
        let a2 = a.clone();
        Self::new(n, move |_, y| &a * y, move |_, _| a2.clone())
    }

    /// Scalar `y' = f(y)` with derivative `df`.
    pub fn scalar<F, D>(f: F, df: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            1,
            move |_, y| Vector::from_element(1, f(y[0])),
            move |_, y| Matrix::from_element(1, 1, df(y[0])),
        )
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField").field("dim", &self.dim).finish()
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, y: &Vector) -> Vector {
        (self.f)(t, y)
    }
    fn jacobian(&self, t: f64, y: &Vector) -> Matrix {
        (self.jac)(t, y)
    }
}

/// Central-difference Jacobian, used as a test oracle.
pub fn fd_jacobian<F>(f: F, y: &Vector, eps: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = y.len();
    let m = f(y).len();
    let mut jac = Matrix::zeros(m, n);
    for k in 0..n {
        let step = eps * (1.0 + y[k].abs());
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[k] += step;
        ym[k] -= step;
        let col = (f(&yp) - f(&ym)) / (2.0 * step);
        jac.set_column(k, &col);
    }
    jac
}
