//! Method-of-lines semi-discretizations of 1D semilinear problems on `[0, 1]`.
//!
//! Every assembly produces a [`SemiDiscreteOde`] of the form
//! `M q' = K q + f(t, q)`, where `K` already carries the sign coming from
//! integration by parts. Dirichlet conditions are imposed by dropping the
//! boundary nodes, so `q` holds interior values only.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::{check_dim, ensure_finite_vector, Factorized, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `u_t = nu u_xx`
    Heat,
    /// `u_t = -a u_x`
    Advection,
    /// `u_t = nu u_xx - u u_x`
    Burgers,
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemKind::Heat => "heat",
            ProblemKind::Advection => "advection",
            ProblemKind::Burgers => "burgers",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    #[serde(alias = "dirichlet")]
    DirichletZero,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum InitialProfile {
    Gaussian {
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * sin(mode * pi * x)`; use an even mode for periodic data.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_u32")]
        mode: u32,
    },
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn default_width() -> f64 {
    0.1
}

impl InitialProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialProfile::Gaussian {
                center,
                width,
                amplitude,
            } => amplitude * (-((x - center) / width).powi(2)).exp(),
            InitialProfile::Sine { amplitude, mode } => {
                amplitude * (f64::from(mode) * std::f64::consts::PI * x).sin()
            }
            InitialProfile::Constant { value } => value,
        }
    }
}

/// A concrete semilinear evolution problem on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionProblem {
    pub kind: ProblemKind,
    pub bc: BoundaryCondition,
    pub diffusion: f64,
    pub advection_speed: f64,
    pub initial: InitialProfile,
}

impl EvolutionProblem {
    pub fn new(
        kind: ProblemKind,
        bc: BoundaryCondition,
        diffusion: f64,
        advection_speed: f64,
        initial: InitialProfile,
    ) -> Result<Self> {
        if !diffusion.is_finite() || !advection_speed.is_finite() {
            return Err(Error::NonFinite("problem coefficients"));
        }
        match kind {
            ProblemKind::Heat if diffusion <= 0.0 => {
                return Err(Error::InvalidArgument(
                    "heat problem needs diffusion nu > 0".into(),
                ))
            }
            ProblemKind::Advection if diffusion != 0.0 => {
                return Err(Error::InvalidArgument(
                    "advection problem needs diffusion nu = 0".into(),
                ))
            }
            ProblemKind::Burgers if diffusion < 0.0 => {
                return Err(Error::InvalidArgument(
                    "burgers problem needs diffusion nu >= 0".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            bc,
            diffusion,
            advection_speed,
            initial,
        })
    }

    pub fn heat(nu: f64, bc: BoundaryCondition, initial: InitialProfile) -> Result<Self> {
        Self::new(ProblemKind::Heat, bc, nu, 0.0, initial)
    }

    pub fn advection(a: f64, bc: BoundaryCondition, initial: InitialProfile) -> Result<Self> {
        Self::new(ProblemKind::Advection, bc, 0.0, a, initial)
    }

    pub fn burgers(nu: f64, bc: BoundaryCondition, initial: InitialProfile) -> Result<Self> {
        Self::new(ProblemKind::Burgers, bc, nu, 0.0, initial)
    }
}

/// The semilinear term `f(t, q)` and its Jacobian.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn eval(&self, t: f64, q: &Vector) -> Vector;
    fn jacobian(&self, t: f64, q: &Vector) -> Matrix;
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroNonlinearity {
    pub dim: usize,
}

impl Nonlinearity for ZeroNonlinearity {
    fn eval(&self, _t: f64, _q: &Vector) -> Vector {
        Vector::zeros(self.dim)
    }
    fn jacobian(&self, _t: f64, _q: &Vector) -> Matrix {
        Matrix::zeros(self.dim, self.dim)
    }
}

type NlFn = dyn Fn(f64, &Vector) -> Vector + Send + Sync;
type NlJac = dyn Fn(f64, &Vector) -> Matrix + Send + Sync;

/// A nonlinearity given by closures.
#[derive(Clone)]
pub struct FnNonlinearity {
    f: Arc<NlFn>,
    jac: Arc<NlJac>,
}

impl FnNonlinearity {
    pub fn new<F, J>(f: F, jac: J) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        J: Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            jac: Arc::new(jac),
        }
    }
}

impl fmt::Debug for FnNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnNonlinearity")
    }
}

impl Nonlinearity for FnNonlinearity {
    fn eval(&self, t: f64, q: &Vector) -> Vector {
        (self.f)(t, q)
    }
    fn jacobian(&self, t: f64, q: &Vector) -> Matrix {
        (self.jac)(t, q)
    }
}

/// Maps mesh nodes to unknowns for a uniform mesh with `n_elements` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct NodeMap {
    n_elements: usize,
    bc: BoundaryCondition,
}

impl NodeMap {
    fn dim(&self) -> usize {
        match self.bc {
            BoundaryCondition::DirichletZero => self.n_elements - 1,
            BoundaryCondition::Periodic => self.n_elements,
        }
    }

    /// Unknown index of mesh node `k` in `0..=n_elements`.
    fn dof(&self, k: usize) -> Option<usize> {
        match self.bc {
            BoundaryCondition::DirichletZero => {
                if k == 0 || k == self.n_elements {
                    None
                } else {
                    Some(k - 1)
                }
            }
            BoundaryCondition::Periodic => Some(k % self.n_elements),
        }
    }

    fn coordinates(&self) -> Vec<f64> {
        let h = 1.0 / self.n_elements as f64;
        (0..=self.n_elements)
            .filter_map(|k| match (self.bc, self.dof(k)) {
                (BoundaryCondition::Periodic, _) if k == self.n_elements => None,
                (_, Some(_)) => Some(k as f64 * h),
                _ => None,
            })
            .collect()
    }

    fn value(&self, q: &Vector, k: usize) -> f64 {
        self.dof(k).map_or(0.0, |i| q[i])
    }
}

/// Skew-form Burgers term `-u u_x` projected onto P1 hats with exact element
/// quadrature.
#[derive(Debug, Clone, Copy)]
pub struct GalerkinBurgers {
    map: NodeMap,
}

impl GalerkinBurgers {
    /// Element load on the (left, right) hats for nodal values `a`, `b`.
    fn element_load(a: f64, b: f64) -> (f64, f64) {
        let d = b - a;
        (-d * (2.0 * a + b) / 6.0, -d * (a + 2.0 * b) / 6.0)
    }

    /// Element Jacobian `[[dL/da, dL/db], [dR/da, dR/db]]`.
    fn element_jacobian(a: f64, b: f64) -> [[f64; 2]; 2] {
        [
            [(4.0 * a - b) / 6.0, -(a + 2.0 * b) / 6.0],
            [(2.0 * a + b) / 6.0, (a - 4.0 * b) / 6.0],
        ]
    }

    /// `[D_q f(q)]^T p`, accumulated element by element from transposed
    /// element Jacobians.
    pub fn jacobian_transpose_apply(&self, q: &Vector, p: &Vector) -> Vector {
        let mut out = Vector::zeros(self.map.dim());
        for k in 0..self.map.n_elements {
            let (a, b) = (self.map.value(q, k), self.map.value(q, k + 1));
            let je = Self::element_jacobian(a, b);
            let dofs = [self.map.dof(k), self.map.dof(k + 1)];
            let pe = [
                dofs[0].map_or(0.0, |i| p[i]),
                dofs[1].map_or(0.0, |i| p[i]),
            ];
            for (col, dof) in dofs.iter().enumerate() {
                if let Some(i) = dof {
                    out[*i] += je[0][col] * pe[0] + je[1][col] * pe[1];
                }
            }
        }
        out
    }
}

impl Nonlinearity for GalerkinBurgers {
    fn eval(&self, _t: f64, q: &Vector) -> Vector {
        let mut f = Vector::zeros(self.map.dim());
        for k in 0..self.map.n_elements {
            let (l, r) = Self::element_load(self.map.value(q, k), self.map.value(q, k + 1));
            if let Some(i) = self.map.dof(k) {
                f[i] += l;
            }
            if let Some(i) = self.map.dof(k + 1) {
                f[i] += r;
            }
        }
        f
    }

    fn jacobian(&self, _t: f64, q: &Vector) -> Matrix {
        let n = self.map.dim();
        let mut jac = Matrix::zeros(n, n);
        for k in 0..self.map.n_elements {
            let je = Self::element_jacobian(self.map.value(q, k), self.map.value(q, k + 1));
            let dofs = [self.map.dof(k), self.map.dof(k + 1)];
            for (r, row) in dofs.iter().enumerate() {
                for (c, col) in dofs.iter().enumerate() {
                    if let (Some(i), Some(j)) = (row, col) {
                        jac[(*i, *j)] += je[r][c];
                    }
                }
            }
        }
        jac
    }
}

/// Pointwise centered Burgers term `-q_i (q_{i+1} - q_{i-1}) / 2h`.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDifferenceBurgers {
    dim: usize,
    h: f64,
    bc: BoundaryCondition,
}

impl FiniteDifferenceBurgers {
    fn neighbours(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let n = self.dim;
        match self.bc {
            BoundaryCondition::Periodic => (Some((i + n - 1) % n), Some((i + 1) % n)),
            BoundaryCondition::DirichletZero => {
                (i.checked_sub(1), if i + 1 < n { Some(i + 1) } else { None })
            }
        }
    }
}

impl Nonlinearity for FiniteDifferenceBurgers {
    fn eval(&self, _t: f64, q: &Vector) -> Vector {
        Vector::from_fn(self.dim, |i, _| {
            let (l, r) = self.neighbours(i);
            let ql = l.map_or(0.0, |j| q[j]);
            let qr = r.map_or(0.0, |j| q[j]);
            -q[i] * (qr - ql) / (2.0 * self.h)
        })
    }

    fn jacobian(&self, _t: f64, q: &Vector) -> Matrix {
        let mut jac = Matrix::zeros(self.dim, self.dim);
        let c = 1.0 / (2.0 * self.h);
        for i in 0..self.dim {
            let (l, r) = self.neighbours(i);
            let ql = l.map_or(0.0, |j| q[j]);
            let qr = r.map_or(0.0, |j| q[j]);
            jac[(i, i)] += -(qr - ql) * c;
            if let Some(j) = r {
                jac[(i, j)] += -q[i] * c;
            }
            if let Some(j) = l {
                jac[(i, j)] += q[i] * c;
            }
        }
        jac
    }
}

/// `M q' = K q + f(t, q)` with Jacobian access.
#[derive(Clone)]
pub struct SemiDiscreteOde {
    mass: Factorized,
    linear: Matrix,
    nonlinear: Arc<dyn Nonlinearity>,
}

impl fmt::Debug for SemiDiscreteOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemiDiscreteOde")
            .field("dim", &self.dim())
            .field("nonlinear", &self.nonlinear)
            .finish()
    }
}

impl SemiDiscreteOde {
    pub fn new(mass: Matrix, linear: Matrix, nonlinear: Arc<dyn Nonlinearity>) -> Result<Self> {
        let mass = Factorized::new(mass, "mass matrix")?;
        check_dim("stiffness rows", mass.dim(), linear.nrows())?;
        check_dim("stiffness columns", mass.dim(), linear.ncols())?;
        Ok(Self {
            mass,
            linear,
            nonlinear,
        })
    }

    /// `M q' = K q`
    pub fn linear_system(mass: Matrix, linear: Matrix) -> Result<Self> {
        let dim = mass.nrows();
        Self::new(mass, linear, Arc::new(ZeroNonlinearity { dim }))
    }

    /// Replaces the mass matrix, keeping `K` and `f`. Used for weighted
    /// (variable-density) variants of an assembled operator.
    pub fn with_mass(mut self, mass: Matrix) -> Result<Self> {
        check_dim("replacement mass", self.dim(), mass.nrows())?;
        self.mass = Factorized::new(mass, "mass matrix")?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn mass(&self) -> &Matrix {
        self.mass.matrix()
    }

    pub fn linear(&self) -> &Matrix {
        &self.linear
    }

    pub fn nonlinear(&self, t: f64, q: &Vector) -> Vector {
        self.nonlinear.eval(t, q)
    }

    pub fn nonlinear_jacobian(&self, t: f64, q: &Vector) -> Matrix {
        self.nonlinear.jacobian(t, q)
    }

    /// `K q + f(t, q)`
    pub fn mass_form_rhs(&self, t: f64, q: &Vector) -> Vector {
        &self.linear * q + self.nonlinear.eval(t, q)
    }

    /// `M^{-1} (K q + f(t, q))`
    pub fn rhs(&self, t: f64, q: &Vector) -> Vector {
        self.mass.solve(&self.mass_form_rhs(t, q))
    }

    /// `K + D_q f(t, q)`
    pub fn mass_form_jacobian(&self, t: f64, q: &Vector) -> Matrix {
        &self.linear + self.nonlinear.jacobian(t, q)
    }

    /// `M^{-1} (K + D_q f(t, q))`
    pub fn rhs_jacobian(&self, t: f64, q: &Vector) -> Matrix {
        self.mass.solve_matrix(&self.mass_form_jacobian(t, q))
    }
}

impl VectorField for SemiDiscreteOde {
    fn dim(&self) -> usize {
        SemiDiscreteOde::dim(self)
    }

    fn eval(&self, t: f64, y: &Vector) -> Vector {
        self.rhs(t, y)
    }

    fn jacobian(&self, t: f64, y: &Vector) -> Matrix {
        self.rhs_jacobian(t, y)
    }

    fn jacobian_action(&self, t: f64, y: &Vector, v: &Vector) -> Vector {
        let w = &self.linear * v + self.nonlinear.jacobian(t, y) * v;
        self.mass.solve(&w)
    }

    fn jacobian_transpose_action(&self, t: f64, y: &Vector, w: &Vector) -> Vector {
        let z = self.mass.solve_transpose(w);
        self.linear.tr_mul(&z) + self.nonlinear.jacobian(t, y).tr_mul(&z)
    }
}

/// Mesh, mass and stiffness of a P1 Galerkin discretization.
#[derive(Debug, Clone)]
pub struct GalerkinDiscretization {
    pub problem: EvolutionProblem,
    pub n_elements: usize,
    pub h: f64,
    /// Coordinates of the unknowns.
    pub nodes: Vec<f64>,
    pub mass: Matrix,
    pub stiffness: Matrix,
    map: NodeMap,
}

impl GalerkinDiscretization {
    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    /// Nodal interpolation of the problem's initial profile.
    pub fn initial_state(&self) -> Vector {
        Vector::from_iterator(
            self.nodes.len(),
            self.nodes.iter().map(|&x| self.problem.initial.eval(x)),
        )
    }

    /// `∫ (Σ p_j φ_j)(Σ q_i φ_i) dx` by two-point Gauss quadrature per element,
    /// which is exact for the piecewise quadratic integrand.
    pub fn l2_inner_product(&self, p: &Vector, q: &Vector) -> f64 {
        let g = 0.5 / 3f64.sqrt();
        let points = [0.5 - g, 0.5 + g];
        let mut total = 0.0;
        for k in 0..self.n_elements {
            let (pa, pb) = (self.map.value(p, k), self.map.value(p, k + 1));
            let (qa, qb) = (self.map.value(q, k), self.map.value(q, k + 1));
            for &s in &points {
                let pv = pa * (1.0 - s) + pb * s;
                let qv = qa * (1.0 - s) + qb * s;
                total += 0.5 * self.h * pv * qv;
            }
        }
        total
    }

    /// Adjoint-side assembly, built by transposing element matrices before
    /// scattering them. Mirrors the dual semi-discretization of the
    /// continuous adjoint equation.
    pub fn dual(&self) -> DualGalerkin {
        let n = self.dim();
        let mut stiffness_t = Matrix::zeros(n, n);
        let local = local_stiffness(&self.problem, self.h);
        for k in 0..self.n_elements {
            let dofs = [self.map.dof(k), self.map.dof(k + 1)];
            for (r, row) in dofs.iter().enumerate() {
                for (c, col) in dofs.iter().enumerate() {
                    if let (Some(i), Some(j)) = (row, col) {
                        // transposed local entry
                        stiffness_t[(*j, *i)] += local[r][c];
                    }
                }
            }
        }
        DualGalerkin {
            mass: self.mass.clone(),
            stiffness_transpose: stiffness_t,
            burgers: match self.problem.kind {
                ProblemKind::Burgers => Some(GalerkinBurgers { map: self.map }),
                _ => None,
            },
        }
    }
}

/// Matrices of the dual semi-discretization `M^T p' = -K^T p - [D_q f]^T p`.
#[derive(Debug, Clone)]
pub struct DualGalerkin {
    pub mass: Matrix,
    pub stiffness_transpose: Matrix,
    burgers: Option<GalerkinBurgers>,
}

impl DualGalerkin {
    /// `-K^T p - [D_q f(q)]^T p`
    pub fn adjoint_mass_form_rhs(&self, q: &Vector, p: &Vector) -> Vector {
        let mut out = -(&self.stiffness_transpose * p);
        if let Some(b) = &self.burgers {
            out -= b.jacobian_transpose_apply(q, p);
        }
        out
    }
}

/// Element matrix of the linear operator, rows = test hat, columns = trial hat.
fn local_stiffness(problem: &EvolutionProblem, h: f64) -> [[f64; 2]; 2] {
    let nu = problem.diffusion;
    let a = problem.advection_speed;
    let diff = nu / h;
    let mut k = [[-diff, diff], [diff, -diff]];
    if problem.kind == ProblemKind::Advection {
        // -a ∫ φ_test φ_trial'
        k[0][0] += 0.5 * a;
        k[0][1] += -0.5 * a;
        k[1][0] += 0.5 * a;
        k[1][1] += -0.5 * a;
    }
    k
}

/// Assembles the P1 Galerkin semi-discretization on a uniform mesh.
pub fn assemble_galerkin(
    problem: &EvolutionProblem,
    n_elements: usize,
) -> Result<(GalerkinDiscretization, SemiDiscreteOde)> {
    if n_elements < 2 {
        return Err(Error::InvalidArgument(format!(
            "Galerkin assembly needs at least 2 elements, got {n_elements}"
        )));
    }
    if problem.kind == ProblemKind::Advection && problem.bc == BoundaryCondition::DirichletZero {
        return Err(Error::Unsupported(
            "Galerkin advection with homogeneous Dirichlet data at both ends is \
             overdetermined; use periodic boundary conditions"
                .into(),
        ));
    }
    if problem.bc == BoundaryCondition::Periodic && n_elements < 3 {
        return Err(Error::InvalidArgument(
            "periodic Galerkin assembly needs at least 3 elements".into(),
        ));
    }
    let map = NodeMap {
        n_elements,
        bc: problem.bc,
    };
    let n = map.dim();
    let h = 1.0 / n_elements as f64;
    let local_mass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let local_k = local_stiffness(problem, h);

    let mut mass = Matrix::zeros(n, n);
    let mut stiffness = Matrix::zeros(n, n);
    for k in 0..n_elements {
        let dofs = [map.dof(k), map.dof(k + 1)];
        for (r, row) in dofs.iter().enumerate() {
            for (c, col) in dofs.iter().enumerate() {
                if let (Some(i), Some(j)) = (row, col) {
                    mass[(*i, *j)] += local_mass[r][c];
                    stiffness[(*i, *j)] += local_k[r][c];
                }
            }
        }
    }

    let nonlinear: Arc<dyn Nonlinearity> = match problem.kind {
        ProblemKind::Burgers => Arc::new(GalerkinBurgers { map }),
        _ => Arc::new(ZeroNonlinearity { dim: n }),
    };
    let ode = SemiDiscreteOde::new(mass.clone(), stiffness.clone(), nonlinear)?;

    let disc = GalerkinDiscretization {
        problem: problem.clone(),
        n_elements,
        h,
        nodes: map.coordinates(),
        mass,
        stiffness,
        map,
    };
    Ok((disc, ode))
}

/// Grid of a finite-difference discretization.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceGrid {
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl FiniteDifferenceGrid {
    pub fn sample(&self, profile: &InitialProfile) -> Vector {
        Vector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&x| profile.eval(x)))
    }
}

/// Assembles a finite-difference semi-discretization with `M = I`.
///
/// For Dirichlet data the grid is `x_i = i / (n_points - 1)` and the
/// `n_points - 2` interior values are unknowns; for periodic data the grid is
/// `x_i = i / n_points` with all `n_points` values unknown. Diffusion uses the
/// centered second difference, advection first-order upwinding.
pub fn assemble_finite_difference(
    problem: &EvolutionProblem,
    n_points: usize,
) -> Result<(FiniteDifferenceGrid, SemiDiscreteOde)> {
    if n_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference assembly needs at least 3 points, got {n_points}"
        )));
    }
    let (n, h, nodes) = match problem.bc {
        BoundaryCondition::DirichletZero => {
            let h = 1.0 / (n_points - 1) as f64;
            let nodes = (1..n_points - 1).map(|i| i as f64 * h).collect();
            (n_points - 2, h, nodes)
        }
        BoundaryCondition::Periodic => {
            let h = 1.0 / n_points as f64;
            let nodes = (0..n_points).map(|i| i as f64 * h).collect();
            (n_points, h, nodes)
        }
    };
    let periodic = problem.bc == BoundaryCondition::Periodic;
    let left = |i: usize| -> Option<usize> {
        if i > 0 {
            Some(i - 1)
        } else if periodic {
            Some(n - 1)
        } else {
            None
        }
    };
    let right = |i: usize| -> Option<usize> {
        if i + 1 < n {
            Some(i + 1)
        } else if periodic {
            Some(0)
        } else {
            None
        }
    };

    let mut k = Matrix::zeros(n, n);
    let nu = problem.diffusion;
    let a = problem.advection_speed;
    for i in 0..n {
        if nu > 0.0 {
            let c = nu / (h * h);
            k[(i, i)] += -2.0 * c;
            if let Some(j) = left(i) {
                k[(i, j)] += c;
            }
            if let Some(j) = right(i) {
                k[(i, j)] += c;
            }
        }
        if problem.kind == ProblemKind::Advection && a != 0.0 {
            let c = a / h;
            if a > 0.0 {
                k[(i, i)] -= c;
                if let Some(j) = left(i) {
                    k[(i, j)] += c;
                }
            } else {
                k[(i, i)] += c;
                if let Some(j) = right(i) {
                    k[(i, j)] -= c;
                }
            }
        }
    }

    let nonlinear: Arc<dyn Nonlinearity> = match problem.kind {
        ProblemKind::Burgers => Arc::new(FiniteDifferenceBurgers {
            dim: n,
            h,
            bc: problem.bc,
        }),
        _ => Arc::new(ZeroNonlinearity { dim: n }),
    };
    let ode = SemiDiscreteOde::new(Matrix::identity(n, n), k, nonlinear)?;
    Ok((FiniteDifferenceGrid { h, nodes }, ode))
}

/// Checks `M rhs(t, q) - K q - f(t, q)`, the residual of the mass form.
pub fn mass_form_residual(ode: &SemiDiscreteOde, t: f64, q: &Vector) -> Result<Vector> {
    ensure_finite_vector(q, "state")?;
    check_dim("state", ode.dim(), q.len())?;
    Ok(ode.mass() * ode.rhs(t, q) - ode.mass_form_rhs(t, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::fd_jacobian;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian() -> InitialProfile {
        InitialProfile::Gaussian {
            center: 0.5,
            width: 0.1,
            amplitude: 1.0,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn heat_one_interior_node() {
        let p = EvolutionProblem::heat(1.0, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        let (disc, ode) = assemble_galerkin(&p, 2).unwrap();
        assert_eq!(disc.dim(), 1);
        assert_relative_eq!(disc.mass[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(disc.stiffness[(0, 0)], -4.0, epsilon = 1e-15);
        let q = Vector::from_element(1, 0.7);
        assert_relative_eq!(ode.rhs(0.0, &q)[0], -12.0 * 0.7, epsilon = 1e-13);
    }

    #[test]
    fn heat_interior_rows() {
        let p = EvolutionProblem::heat(1.0, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        let (disc, _) = assemble_galerkin(&p, 8).unwrap();
        let h = disc.h;
        let i = 3;
        assert_relative_eq!(disc.mass[(i, i - 1)], h / 6.0, epsilon = 1e-15);
        assert_relative_eq!(disc.mass[(i, i)], 4.0 * h / 6.0, epsilon = 1e-15);
        assert_relative_eq!(disc.mass[(i, i + 1)], h / 6.0, epsilon = 1e-15);
        assert_relative_eq!(disc.stiffness[(i, i - 1)], 1.0 / h, epsilon = 1e-12);
        assert_relative_eq!(disc.stiffness[(i, i)], -2.0 / h, epsilon = 1e-12);
        assert_relative_eq!(disc.stiffness[(i, i + 1)], 1.0 / h, epsilon = 1e-12);
        assert!(disc.mass.clone().cholesky().is_some());
        assert_eq!(disc.mass, disc.mass.transpose());
    }

    #[test]
    fn periodic_advection_annihilates_constants() {
        for n in [3, 7, 16] {
            let p = EvolutionProblem::advection(1.3, BoundaryCondition::Periodic, gaussian()).unwrap();
            let (disc, ode) = assemble_galerkin(&p, n).unwrap();
            let ones = Vector::from_element(disc.dim(), 1.0);
            assert!((&disc.stiffness * &ones).amax() < 1e-12);
            assert!(ode.rhs(0.0, &ones).amax() < 1e-12);
        }
    }

    #[test]
    fn burgers_vanishes_at_zero() {
        let p = EvolutionProblem::burgers(0.1, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        let (disc, ode) = assemble_galerkin(&p, 10).unwrap();
        let z = Vector::zeros(disc.dim());
        assert_eq!(ode.nonlinear(0.0, &z).amax(), 0.0);
        assert_eq!(ode.nonlinear_jacobian(0.0, &z).amax(), 0.0);
    }

    #[test]
    fn galerkin_advection_dirichlet_unsupported() {
        let p = EvolutionProblem::advection(1.0, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        assert!(matches!(assemble_galerkin(&p, 8), Err(Error::Unsupported(_))));
        assert!(assemble_galerkin(
            &EvolutionProblem::heat(1.0, BoundaryCondition::DirichletZero, gaussian()).unwrap(),
            1
        )
        .is_err());
    }

    #[test]
    fn problem_invariants() {
        assert!(EvolutionProblem::heat(0.0, BoundaryCondition::Periodic, gaussian()).is_err());
        assert!(EvolutionProblem::new(
            ProblemKind::Advection,
            BoundaryCondition::Periodic,
            0.1,
            1.0,
            gaussian()
        )
        .is_err());
        assert!(EvolutionProblem::burgers(-1.0, BoundaryCondition::Periodic, gaussian()).is_err());
        assert!(EvolutionProblem::burgers(0.0, BoundaryCondition::Periodic, gaussian()).is_ok());
    }

    #[test]
    fn fd_heat_stencil() {
        let p = EvolutionProblem::heat(1.0, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        let (grid, ode) = assemble_finite_difference(&p, 3).unwrap();
        assert_eq!(grid.h, 0.5);
        assert_eq!(ode.dim(), 1);
        assert_eq!(ode.linear()[(0, 0)], -8.0);
        let (_, ode) = assemble_finite_difference(&p, 6).unwrap();
        let h2 = 25.0;
        assert_relative_eq!(ode.linear()[(2, 1)], h2, epsilon = 1e-12);
        assert_relative_eq!(ode.linear()[(2, 2)], -2.0 * h2, epsilon = 1e-12);
        assert_relative_eq!(ode.linear()[(2, 3)], h2, epsilon = 1e-12);
        assert_eq!(ode.mass(), &Matrix::identity(4, 4));
    }

    #[test]
    fn fd_upwind_rows_sum_to_zero() {
        for a in [1.0, -0.7] {
            let p = EvolutionProblem::advection(a, BoundaryCondition::Periodic, gaussian()).unwrap();
            let (_, ode) = assemble_finite_difference(&p, 12).unwrap();
            let ones = Vector::from_element(12, 1.0);
            assert!(ode.rhs(0.0, &(ones * 2.5)).amax() < 1e-13);
        }
    }

    #[test]
    fn fd_burgers_zero() {
        let p = EvolutionProblem::burgers(0.1, BoundaryCondition::Periodic, gaussian()).unwrap();
        let (_, ode) = assemble_finite_difference(&p, 8).unwrap();
        assert_eq!(ode.nonlinear(0.0, &Vector::zeros(8)).amax(), 0.0);
    }

    #[test]
    fn nonlinear_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for bc in [BoundaryCondition::DirichletZero, BoundaryCondition::Periodic] {
            let p = EvolutionProblem::burgers(0.05, bc, gaussian()).unwrap();
            let (_, g) = assemble_galerkin(&p, 9).unwrap();
            let (_, fd) = assemble_finite_difference(&p, 9).unwrap();
            for ode in [g, fd] {
                for _ in 0..5 {
                    let q = random_vec(&mut rng, ode.dim());
                    let exact = ode.nonlinear_jacobian(0.0, &q);
                    let approx = fd_jacobian(|x| ode.nonlinear(0.0, x), &q, 1e-6);
                    for j in 0..ode.dim() {
                        let e = exact.column(j);
                        let a = approx.column(j);
                        assert!((e - a).amax() <= 1e-6 * e.amax().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn rhs_consistent_with_mass_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = EvolutionProblem::burgers(0.1, BoundaryCondition::DirichletZero, gaussian()).unwrap();
        let (_, ode) = assemble_galerkin(&p, 10).unwrap();
        for _ in 0..10 {
            let q = random_vec(&mut rng, ode.dim());
            let r = mass_form_residual(&ode, 0.0, &q).unwrap();
            let scale = ode.mass_form_rhs(0.0, &q).amax().max(1.0);
            assert!(r.amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn mass_pairing_is_l2_restriction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bc in [BoundaryCondition::DirichletZero, BoundaryCondition::Periodic] {
            let p = EvolutionProblem::heat(1.0, bc, gaussian()).unwrap();
            let (disc, _) = assemble_galerkin(&p, 12).unwrap();
            let pairing = crate::DualityPairing::mass_induced(disc.mass.clone()).unwrap();
            for _ in 0..10 {
                let a = random_vec(&mut rng, disc.dim());
                let b = random_vec(&mut rng, disc.dim());
                let lhs = pairing.pair(&a, &b).unwrap();
                let rhs = disc.l2_inner_product(&a, &b);
                assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn burgers_periodic_conserves_mass_of_load() {
        // Σ_j f_j telescopes to zero for periodic data
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = EvolutionProblem::burgers(0.0, BoundaryCondition::Periodic, gaussian()).unwrap();
        let (_, ode) = assemble_galerkin(&p, 11).unwrap();
        let q = random_vec(&mut rng, 11);
        assert!(ode.nonlinear(0.0, &q).sum().abs() < 1e-14);
    }

    #[test]
    fn dual_assembly_matches_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = EvolutionProblem::burgers(0.1, BoundaryCondition::Periodic, gaussian()).unwrap();
        let (disc, ode) = assemble_galerkin(&p, 9).unwrap();
        let dual = disc.dual();
        assert_relative_eq!(dual.stiffness_transpose, disc.stiffness.transpose(), epsilon = 1e-13);
        let q = random_vec(&mut rng, 9);
        let pv = random_vec(&mut rng, 9);
        let expected = -(ode.mass_form_jacobian(0.0, &q).transpose() * &pv);
        assert!((dual.adjoint_mass_form_rhs(&q, &pv) - expected).amax() < 1e-13);
    }
}
