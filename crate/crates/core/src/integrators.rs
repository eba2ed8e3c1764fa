//! One-step time integration with tangent and cotangent lifts.
//!
//! A one-step method `y_{n+1} = Φ(y_n)` induces the variational method
//! `δy_{n+1} = TΦ δy_n` and the cotangent-lifted method
//! `p_n = (TΦ)^* p_{n+1}`. The pair conserves `<p_n, δy_n>` and the lifted
//! method is the exact reverse-mode derivative of the discrete flow.
//!
//! Explicit Runge-Kutta lifts are computed by stage-wise transposition;
//! the implicit midpoint lift uses one transposed solve per step with the
//! converged stage Jacobian.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjoint::{form_variational, split_variational, stack_variational};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::{check_dim, ensure_finite_vector, norm_inf, solve_once, Factorized, Matrix, Vector};
use crate::pairings::DualityPairing;

/// Names accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    ExplicitEuler,
    Heun,
    Rk4,
    ImplicitMidpoint,
    AdaptiveEuler,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::ExplicitEuler,
        MethodName::Heun,
        MethodName::Rk4,
        MethodName::ImplicitMidpoint,
        MethodName::AdaptiveEuler,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::ExplicitEuler => "explicit-euler",
            MethodName::Heun => "heun",
            MethodName::Rk4 => "rk4",
            MethodName::ImplicitMidpoint => "implicit-midpoint",
            MethodName::AdaptiveEuler => "adaptive-euler",
        }
    }

    /// The fixed-step method, if this is one.
    pub fn fixed_step(&self) -> Option<OneStepMethod> {
        match self {
            MethodName::ExplicitEuler => Some(OneStepMethod::ExplicitEuler),
            MethodName::Heun => Some(OneStepMethod::Heun),
            MethodName::Rk4 => Some(OneStepMethod::Rk4),
            MethodName::ImplicitMidpoint => Some(OneStepMethod::implicit_midpoint()),
            MethodName::AdaptiveEuler => None,
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let found = match norm.as_str() {
            "euler" | "explicit-euler" | "forward-euler" => Some(MethodName::ExplicitEuler),
            "heun" => Some(MethodName::Heun),
            "rk4" => Some(MethodName::Rk4),
            "implicit-midpoint" | "midpoint" | "imr" => Some(MethodName::ImplicitMidpoint),
            "adaptive-euler" => Some(MethodName::AdaptiveEuler),
            _ => None,
        };
        found.ok_or_else(|| {
            let valid: Vec<_> = MethodName::ALL.iter().map(|m| m.as_str()).collect();
            Error::InvalidArgument(format!(
                "unknown method '{s}'; valid options: {}",
                valid.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Explicit Butcher tableau, strictly lower triangular `a`.
struct Tableau {
    a: &'static [&'static [f64]],
    b: &'static [f64],
    c: &'static [f64],
}

const EULER: Tableau = Tableau {
    a: &[&[]],
    b: &[1.0],
    c: &[0.0],
};

const HEUN: Tableau = Tableau {
    a: &[&[], &[1.0]],
    b: &[0.5, 0.5],
    c: &[0.0, 1.0],
};

const RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    c: &[0.0, 0.5, 0.5, 1.0],
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneStepMethod {
    ExplicitEuler,
    Heun,
    Rk4,
    ImplicitMidpoint(NewtonOptions),
}

impl OneStepMethod {
    pub fn implicit_midpoint() -> Self {
        OneStepMethod::ImplicitMidpoint(NewtonOptions::default())
    }

    pub fn name(&self) -> MethodName {
        match self {
            OneStepMethod::ExplicitEuler => MethodName::ExplicitEuler,
            OneStepMethod::Heun => MethodName::Heun,
            OneStepMethod::Rk4 => MethodName::Rk4,
            OneStepMethod::ImplicitMidpoint(_) => MethodName::ImplicitMidpoint,
        }
    }

    pub fn order(&self) -> u32 {
        match self {
            OneStepMethod::ExplicitEuler => 1,
            OneStepMethod::Heun | OneStepMethod::ImplicitMidpoint(_) => 2,
            OneStepMethod::Rk4 => 4,
        }
    }

    fn tableau(&self) -> Option<&'static Tableau> {
        match self {
            OneStepMethod::ExplicitEuler => Some(&EULER),
            OneStepMethod::Heun => Some(&HEUN),
            OneStepMethod::Rk4 => Some(&RK4),
            OneStepMethod::ImplicitMidpoint(_) => None,
        }
    }

    /// Stage values of one step: the RK stage inputs `Y_i` for explicit
    /// methods, the converged midpoint `Y` for the implicit midpoint rule.
    fn stages<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        y: &Vector,
        h: f64,
        step: usize,
    ) -> Result<Stages> {
        match (self, self.tableau()) {
            (_, Some(tab)) => {
                let mut ys: Vec<Vector> = Vec::with_capacity(tab.b.len());
                let mut ks: Vec<Vector> = Vec::with_capacity(tab.b.len());
                for (i, row) in tab.a.iter().enumerate() {
                    let mut yi = y.clone();
                    for (j, aij) in row.iter().enumerate() {
                        if *aij != 0.0 {
                            yi.axpy(h * aij, &ks[j], 1.0);
                        }
                    }
                    ks.push(field.eval(t + tab.c[i] * h, &yi));
                    ys.push(yi);
                }
                let mut next = y.clone();
                for (bi, ki) in tab.b.iter().zip(&ks) {
                    next.axpy(h * bi, ki, 1.0);
                }
                Ok(Stages { values: ys, next })
            }
            (OneStepMethod::ImplicitMidpoint(opts), None) => {
                let mid = midpoint_newton(field, t, y, h, *opts, step)?;
                let next = &mid * 2.0 - y;
                Ok(Stages {
                    values: vec![mid],
                    next,
                })
            }
            _ => unreachable!("explicit methods carry a tableau"),
        }
    }

    pub fn step<F: VectorField + ?Sized>(&self, field: &F, t: f64, y: &Vector, h: f64) -> Result<Vector> {
        Ok(self.stages(field, t, y, h, 0)?.next)
    }

    /// `TΦ δy`, the derivative of [`step`](Self::step) in `y`.
    pub fn tangent_step<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        y: &Vector,
        dy: &Vector,
        h: f64,
    ) -> Result<Vector> {
        let st = self.stages(field, t, y, h, 0)?;
        self.tangent_with(field, t, dy, h, &st)
    }

    /// `(TΦ)^* p_next` with respect to `pairing`.
    pub fn cotangent_step<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        y: &Vector,
        p_next: &Vector,
        h: f64,
        pairing: &DualityPairing,
    ) -> Result<Vector> {
        let st = self.stages(field, t, y, h, 0)?;
        self.cotangent_with(field, t, p_next, h, &st, pairing)
    }

    fn tangent_with<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        dy: &Vector,
        h: f64,
        st: &Stages,
    ) -> Result<Vector> {
        match self.tableau() {
            Some(tab) => {
                let mut dks: Vec<Vector> = Vec::with_capacity(tab.b.len());
                for (i, row) in tab.a.iter().enumerate() {
                    let mut dyi = dy.clone();
                    for (j, aij) in row.iter().enumerate() {
                        if *aij != 0.0 {
                            dyi.axpy(h * aij, &dks[j], 1.0);
                        }
                    }
                    dks.push(field.jacobian_action(t + tab.c[i] * h, &st.values[i], &dyi));
                }
                let mut out = dy.clone();
                for (bi, dki) in tab.b.iter().zip(&dks) {
                    out.axpy(h * bi, dki, 1.0);
                }
                Ok(out)
            }
            None => {
                let a = midpoint_matrix(field, t, &st.values[0], h);
                let dmid = solve_once(a, dy, "implicit midpoint tangent")?;
                Ok(&dmid * 2.0 - dy)
            }
        }
    }

    fn cotangent_with<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        p_next: &Vector,
        h: f64,
        st: &Stages,
        pairing: &DualityPairing,
    ) -> Result<Vector> {
        let z = pairing.to_standard(p_next);
        let out = self.standard_cotangent(field, t, &z, h, st)?;
        Ok(pairing.from_standard(&out))
    }

    /// Reverse-mode transposition of one step in the standard pairing.
    fn standard_cotangent<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        lam: &Vector,
        h: f64,
        st: &Stages,
    ) -> Result<Vector> {
        match self.tableau() {
            Some(tab) => {
                let s = tab.b.len();
                let mut lam_k: Vec<Vector> = tab.b.iter().map(|bi| lam * (h * bi)).collect();
                let mut out = lam.clone();
                for i in (0..s).rev() {
                    let lam_y = field.jacobian_transpose_action(t + tab.c[i] * h, &st.values[i], &lam_k[i]);
                    for (j, aij) in tab.a[i].iter().enumerate() {
                        if *aij != 0.0 {
                            lam_k[j].axpy(h * aij, &lam_y, 1.0);
                        }
                    }
                    out += lam_y;
                }
                Ok(out)
            }
            None => {
                let a = midpoint_matrix(field, t, &st.values[0], h);
                let w = solve_once(a.transpose(), lam, "implicit midpoint cotangent")?;
                Ok(&w * 2.0 - lam)
            }
        }
    }

    /// The step Jacobian `TΦ` assembled as a dense matrix.
    pub fn step_jacobian<F: VectorField + ?Sized>(&self, field: &F, t: f64, y: &Vector, h: f64) -> Result<Matrix> {
        let st = self.stages(field, t, y, h, 0)?;
        self.step_jacobian_with(field, t, h, &st)
    }

    fn step_jacobian_with<F: VectorField + ?Sized>(
        &self,
        field: &F,
        t: f64,
        h: f64,
        st: &Stages,
    ) -> Result<Matrix> {
        let n = st.next.len();
        let id = Matrix::identity(n, n);
        match self.tableau() {
            Some(tab) => {
                let mut dk: Vec<Matrix> = Vec::with_capacity(tab.b.len());
                for (i, row) in tab.a.iter().enumerate() {
                    let mut dyi = id.clone();
                    for (j, aij) in row.iter().enumerate() {
                        if *aij != 0.0 {
                            dyi += &dk[j] * (h * aij);
                        }
                    }
                    dk.push(field.jacobian(t + tab.c[i] * h, &st.values[i]) * dyi);
                }
                let mut out = id;
                for (bi, dki) in tab.b.iter().zip(&dk) {
                    out += dki * (h * bi);
                }
                Ok(out)
            }
            None => {
                let a = Factorized::new(midpoint_matrix(field, t, &st.values[0], h), "implicit midpoint step Jacobian")?;
                Ok(a.solve_matrix(&id) * 2.0 - id)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Stages {
    values: Vec<Vector>,
    next: Vector,
}

/// `I - (h/2) J(t + h/2, Y)`
fn midpoint_matrix<F: VectorField + ?Sized>(field: &F, t: f64, mid: &Vector, h: f64) -> Matrix {
    let n = mid.len();
    Matrix::identity(n, n) - field.jacobian(t + 0.5 * h, mid) * (0.5 * h)
}

/// Solves `Y = y + (h/2) g(t + h/2, Y)` by Newton's method.
fn midpoint_newton<F: VectorField + ?Sized>(
    field: &F,
    t: f64,
    y: &Vector,
    h: f64,
    opts: NewtonOptions,
    step: usize,
) -> Result<Vector> {
    let tm = t + 0.5 * h;
    let residual = |mid: &Vector| mid - y - field.eval(tm, mid) * (0.5 * h);
    let mut mid = y.clone();
    let mut r = residual(&mid);
    for iter in 0..opts.max_iter {
        if norm_inf(&r) <= opts.tol * (1.0 + norm_inf(&mid)) {
            return Ok(mid);
        }
        let a = midpoint_matrix(field, t, &mid, h);
        let delta = solve_once(a, &r, "implicit midpoint Newton").map_err(|_| Error::NewtonFailed {
            step,
            iterations: iter,
            residual: norm_inf(&r),
        })?;
        mid -= delta;
        r = residual(&mid);
        if !r.iter().all(|x| x.is_finite()) {
            break;
        }
    }
    if norm_inf(&r) <= opts.tol * (1.0 + norm_inf(&mid)) {
        return Ok(mid);
    }
    Err(Error::NewtonFailed {
        step,
        iterations: opts.max_iter,
        residual: norm_inf(&r),
    })
}

/// Stored state, variational and adjoint trajectories.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBundle {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub variations: Option<Vec<Vector>>,
    pub adjoints: Option<Vec<Vector>>,
    pub invariant_series: Option<Vec<f64>>,
    stages: Vec<Stages>,
}

impl TrajectoryBundle {
    pub fn n_steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn step_size(&self, n: usize) -> f64 {
        self.times[n + 1] - self.times[n]
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Lengths agree and times increase strictly.
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        check_dim("trajectory states", n, self.states.len())?;
        for (what, series) in [("variations", &self.variations), ("adjoints", &self.adjoints)] {
            if let Some(s) = series {
                check_dim(what, n, s.len())?;
            }
        }
        if let Some(s) = &self.invariant_series {
            check_dim("invariant series", n, s.len())?;
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("trajectory times must increase strictly".into()));
        }
        Ok(())
    }

    /// Largest deviation of the invariant from its terminal value, relative
    /// to the Cauchy-Schwarz bound `max_n |p_n| |P δq_n|`.
    pub fn invariant_drift(&self, pairing: &DualityPairing) -> Option<f64> {
        let series = self.invariant_series.as_ref()?;
        let p = self.adjoints.as_ref()?;
        let dq = self.variations.as_ref()?;
        let last = *series.last()?;
        let scale = p
            .iter()
            .zip(dq)
            .map(|(a, b)| a.norm() * (pairing.matrix() * b).norm())
            .fold(0.0, f64::max);
        let dev = series.iter().map(|v| (v - last).abs()).fold(0.0, f64::max);
        Some(if scale > 0.0 { dev / scale } else { dev })
    }

    pub(crate) fn stages(&self, n: usize) -> Option<&Stages> {
        self.stages.get(n)
    }
}

fn check_span(t0: f64, tf: f64, n_steps: usize) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
        return Err(Error::InvalidArgument(format!("need t0 < tf, got [{t0}, {tf}]")));
    }
    Ok((tf - t0) / n_steps as f64)
}

fn uniform_times(t0: f64, h: f64, n_steps: usize, tf: f64) -> Vec<f64> {
    (0..=n_steps)
        .map(|n| if n == n_steps { tf } else { t0 + n as f64 * h })
        .collect()
}

pub fn integrate_forward<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    y0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
) -> Result<TrajectoryBundle> {
    let h = check_span(t0, tf, n_steps)?;
    check_dim("initial state", field.dim(), y0.len())?;
    ensure_finite_vector(y0, "initial state")?;
    let times = uniform_times(t0, h, n_steps, tf);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut stages = Vec::with_capacity(n_steps);
    states.push(y0.clone());
    for n in 0..n_steps {
        let st = method.stages(field, times[n], &states[n], times[n + 1] - times[n], n)?;
        if !st.next.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { step: n });
        }
        states.push(st.next.clone());
        stages.push(st);
    }
    Ok(TrajectoryBundle {
        times,
        states,
        variations: None,
        adjoints: None,
        invariant_series: None,
        stages,
    })
}

/// Forward solve together with the tangent-lifted variations.
pub fn integrate_variational<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    y0: &Vector,
    dy0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
) -> Result<TrajectoryBundle> {
    check_dim("initial variation", field.dim(), dy0.len())?;
    let mut traj = integrate_forward(method, field, y0, t0, tf, n_steps)?;
    let mut vars = Vec::with_capacity(n_steps + 1);
    vars.push(dy0.clone());
    for n in 0..n_steps {
        let dy = method.tangent_with(field, traj.times[n], &vars[n], traj.step_size(n), &traj.stages[n])?;
        vars.push(dy);
    }
    traj.variations = Some(vars);
    Ok(traj)
}

/// Runs the cotangent-lifted method `p_{n+1} -> p_n` from `p_terminal`
/// backwards along a stored forward trajectory.
///
/// When the bundle carries variations, the invariant `<p_n, δq_n>` is
/// recorded in `invariant_series`.
pub fn backpropagate<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    forward: &TrajectoryBundle,
    p_terminal: &Vector,
    pairing: &DualityPairing,
) -> Result<TrajectoryBundle> {
    let n_steps = forward.n_steps();
    if forward.states.len() != n_steps + 1 || n_steps == 0 {
        return Err(Error::MissingTrajectory("forward states"));
    }
    if forward.stages.len() != n_steps {
        return Err(Error::MissingTrajectory("forward stage values"));
    }
    check_dim("terminal adjoint", field.dim(), p_terminal.len())?;
    check_dim("pairing", field.dim(), pairing.dim())?;
    ensure_finite_vector(p_terminal, "terminal adjoint")?;

    let mut adj = vec![Vector::zeros(0); n_steps + 1];
    adj[n_steps] = p_terminal.clone();
    for n in (0..n_steps).rev() {
        adj[n] = method.cotangent_with(
            field,
            forward.times[n],
            &adj[n + 1],
            forward.step_size(n),
            &forward.stages[n],
            pairing,
        )?;
    }
    let mut out = forward.clone();
    if let Some(vars) = &forward.variations {
        out.invariant_series = Some(
            adj.iter()
                .zip(vars)
                .map(|(p, dq)| pairing.pair_unchecked(p, dq))
                .collect(),
        );
    }
    out.adjoints = Some(adj);
    Ok(out)
}

/// One cotangent step along a stored trajectory, reusing its stage values.
pub(crate) fn cotangent_at<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    forward: &TrajectoryBundle,
    n: usize,
    p_next: &Vector,
    pairing: &DualityPairing,
) -> Result<Vector> {
    let st = forward.stages(n).ok_or(Error::MissingTrajectory("forward stage values"))?;
    method.cotangent_with(field, forward.times[n], p_next, forward.step_size(n), st, pairing)
}

/// Step Jacobian along a stored trajectory, reusing its stage values.
pub(crate) fn step_jacobian_at<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    forward: &TrajectoryBundle,
    n: usize,
) -> Result<Matrix> {
    let st = forward.stages(n).ok_or(Error::MissingTrajectory("forward stage values"))?;
    method.step_jacobian_with(field, forward.times[n], forward.step_size(n), st)
}

/// Step-size law `h_{n+1} = S(y_n, h_n, s_n)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerLaw {
    /// `S = h_fixed`; all partials vanish.
    Constant { h: f64 },
    /// `S = h (1 + gain |y_ref|^2) / (1 + gain |y|^2)`. Steps lengthen as the
    /// state decays.
    StateDependent { gain: f64, reference_sq: f64 },
}

/// Partial derivatives of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPartials {
    pub d_state: Vector,
    pub d_step: f64,
    pub d_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveController {
    pub law: ControllerLaw,
    pub h_min: f64,
    pub h_max: f64,
}

impl AdaptiveController {
    pub fn constant(h: f64) -> Self {
        Self {
            law: ControllerLaw::Constant { h },
            h_min: h,
            h_max: h,
        }
    }

    /// State-dependent law normalised so the first proposed step equals `h0`.
    pub fn state_dependent(gain: f64, y0: &Vector, h_min: f64, h_max: f64) -> Self {
        Self {
            law: ControllerLaw::StateDependent {
                gain,
                reference_sq: y0.norm_squared(),
            },
            h_min,
            h_max,
        }
    }

    fn raw(&self, y: &Vector, h: f64) -> f64 {
        match self.law {
            ControllerLaw::Constant { h: hc } => hc,
            ControllerLaw::StateDependent { gain, reference_sq } => {
                h * (1.0 + gain * reference_sq) / (1.0 + gain * y.norm_squared())
            }
        }
    }

    pub fn next_step(&self, y: &Vector, h: f64, _s: f64) -> f64 {
        self.raw(y, h).clamp(self.h_min, self.h_max)
    }

    /// `(D_1 S, D_2 S, D_3 S)`; zero wherever the clamp is active.
    pub fn partials(&self, y: &Vector, h: f64, _s: f64) -> ControllerPartials {
        let n = y.len();
        let zero = ControllerPartials {
            d_state: Vector::zeros(n),
            d_step: 0.0,
            d_time: 0.0,
        };
        let raw = self.raw(y, h);
        if raw < self.h_min || raw > self.h_max {
            return zero;
        }
        match self.law {
            ControllerLaw::Constant { .. } => zero,
            ControllerLaw::StateDependent { gain, reference_sq } => {
                let denom = 1.0 + gain * y.norm_squared();
                let num = 1.0 + gain * reference_sq;
                ControllerPartials {
                    d_state: y * (-2.0 * gain * h * num / (denom * denom)),
                    d_step: num / denom,
                    d_time: 0.0,
                }
            }
        }
    }
}

/// Result of the adaptive forward Euler scheme.
#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub bundle: TrajectoryBundle,
    /// Controller output `h_n` before truncation at the final time.
    pub proposed_steps: Vec<f64>,
    /// Whether the last step was shortened to land on `tf`.
    pub truncated_last: bool,
    pub t_final: f64,
}

impl AdaptiveRun {
    pub fn n_steps(&self) -> usize {
        self.bundle.n_steps()
    }

    fn is_truncated(&self, n: usize) -> bool {
        self.truncated_last && n + 1 == self.n_steps()
    }
}

pub const DEFAULT_MAX_ADAPTIVE_STEPS: usize = 1_000_000;

/// `y_{n+1} = y_n + h_n g(s_n, y_n)`, `s_{n+1} = s_n + h_n`,
/// `h_{n+1} = S(y_n, h_n, s_n)`, with the final step truncated at `tf`.
pub fn integrate_adaptive_euler<F: VectorField + ?Sized>(
    controller: &AdaptiveController,
    field: &F,
    y0: &Vector,
    t0: f64,
    tf: f64,
    h0: f64,
    max_steps: usize,
) -> Result<AdaptiveRun> {
    check_span(t0, tf, 1)?;
    check_dim("initial state", field.dim(), y0.len())?;
    ensure_finite_vector(y0, "initial state")?;
    if !(h0 > 0.0) || !(controller.h_min > 0.0) || controller.h_max < controller.h_min {
        return Err(Error::InvalidArgument(
            "adaptive Euler needs h0 > 0 and 0 < h_min <= h_max".into(),
        ));
    }
    let snap = 1e-12 * (tf - t0);
    let mut times = vec![t0];
    let mut states = vec![y0.clone()];
    let mut proposed = Vec::new();
    let mut truncated_last = false;
    let (mut s, mut h) = (t0, h0);
    while tf - s > snap {
        if proposed.len() >= max_steps {
            return Err(Error::StepLimit {
                max_steps,
                t_final: tf,
            });
        }
        let y = states.last().unwrap();
        let (used, s_next) = if s + h >= tf - snap {
            truncated_last = true;
            (tf - s, tf)
        } else {
            (h, s + h)
        };
        let next = y + field.eval(s, y) * used;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { step: proposed.len() });
        }
        let h_next = controller.next_step(y, h, s);
        proposed.push(h);
        states.push(next);
        times.push(s_next);
        s = s_next;
        h = h_next;
    }
    Ok(AdaptiveRun {
        bundle: TrajectoryBundle {
            times,
            states,
            ..Default::default()
        },
        proposed_steps: proposed,
        truncated_last,
        t_final: tf,
    })
}

/// Variations of the full adaptive scheme, `(δy_n, δs_n, δh_n)`, including
/// the step-size coupling through the controller partials.
pub fn adaptive_variations<F: VectorField + ?Sized>(
    controller: &AdaptiveController,
    field: &F,
    run: &AdaptiveRun,
    dy0: &Vector,
    ds0: f64,
) -> Result<Vec<(Vector, f64, f64)>> {
    check_dim("initial variation", field.dim(), dy0.len())?;
    let b = &run.bundle;
    let mut out = Vec::with_capacity(b.n_steps() + 1);
    out.push((dy0.clone(), ds0, 0.0));
    for n in 0..b.n_steps() {
        let (dy, ds, dh) = out[n].clone();
        let (s, y) = (b.times[n], &b.states[n]);
        let h_prop = run.proposed_steps[n];
        let g = field.eval(s, y);
        let (used, dh_used) = if run.is_truncated(n) {
            (b.step_size(n), -ds)
        } else {
            (h_prop, dh)
        };
        let mut dy_next = &dy + (field.jacobian_action(s, y, &dy) + field.time_derivative(s, y) * ds) * used;
        dy_next.axpy(dh_used, &g, 1.0);
        let part = controller.partials(y, h_prop, s);
        let dh_next = part.d_state.dot(&dy) + part.d_step * dh + part.d_time * ds;
        out.push((dy_next, ds + dh_used, dh_next));
    }
    Ok(out)
}

/// Variations obtained by applying the adaptive scheme to the continuous
/// variational system: the step sizes are inherited, so `δh` never enters.
pub fn adaptive_of_variational<F: VectorField + ?Sized>(
    field: &F,
    run: &AdaptiveRun,
    dy0: &Vector,
    ds0: f64,
) -> Result<Vec<(Vector, f64)>> {
    check_dim("initial variation", field.dim(), dy0.len())?;
    let b = &run.bundle;
    let mut out = Vec::with_capacity(b.n_steps() + 1);
    out.push((dy0.clone(), ds0));
    for n in 0..b.n_steps() {
        let (dy, ds) = out[n].clone();
        let (s, y) = (b.times[n], &b.states[n]);
        let used = b.step_size(n);
        let dy_next = &dy + (field.jacobian_action(s, y, &dy) + field.time_derivative(s, y) * ds) * used;
        out.push((dy_next, ds));
    }
    Ok(out)
}

/// Exact reverse-mode derivative of the adaptive scheme with respect to
/// `y_0`, including the dependence of the step sizes on the state. Returns
/// the state adjoints `λ_y` at every step.
pub fn adaptive_backpropagate<F: VectorField + ?Sized>(
    controller: &AdaptiveController,
    field: &F,
    run: &AdaptiveRun,
    p_terminal: &Vector,
) -> Result<Vec<Vector>> {
    check_dim("terminal adjoint", field.dim(), p_terminal.len())?;
    let b = &run.bundle;
    let n_steps = b.n_steps();
    let mut lam_y = vec![Vector::zeros(0); n_steps + 1];
    lam_y[n_steps] = p_terminal.clone();
    let (mut lam_s, mut lam_h) = (0.0, 0.0);
    for n in (0..n_steps).rev() {
        let (s, y) = (b.times[n], &b.states[n]);
        let h_prop = run.proposed_steps[n];
        let used = b.step_size(n);
        let ly = &lam_y[n + 1];
        let g = field.eval(s, y);
        let part = controller.partials(y, h_prop, s);
        let mut next_y = ly + field.jacobian_transpose_action(s, y, ly) * used;
        next_y.axpy(lam_h, &part.d_state, 1.0);
        let dgs = field.time_derivative(s, y).dot(ly) * used;
        let (next_s, next_h) = if run.is_truncated(n) {
            (dgs - g.dot(ly) + part.d_time * lam_h, part.d_step * lam_h)
        } else {
            (
                lam_s + dgs + part.d_time * lam_h,
                g.dot(ly) + lam_s + part.d_step * lam_h,
            )
        };
        lam_y[n] = next_y;
        lam_s = next_s;
        lam_h = next_h;
    }
    Ok(lam_y)
}

/// Per-step discrepancy between the variational system of a method and the
/// method applied to the variational system.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceResidual {
    pub max_residual: f64,
    pub per_step: Vec<f64>,
    /// Largest `max(|y_n|, |δy_n|)` seen, for relative comparisons.
    pub scale: f64,
    pub variation_scale: f64,
}

pub fn variational_equivariance_residual<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    y0: &Vector,
    dy0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
) -> Result<EquivarianceResidual> {
    let lifted = integrate_variational(method, field, y0, dy0, t0, tf, n_steps)?;
    let augmented = form_variational(field);
    let stacked = integrate_forward(
        method,
        &augmented,
        &stack_variational(y0, dy0),
        t0,
        tf,
        n_steps,
    )?;
    let vars = lifted.variations.as_ref().expect("variational run stores variations");
    let mut per_step = Vec::with_capacity(n_steps + 1);
    let (mut scale, mut vscale) = (0.0f64, 0.0f64);
    for ((x, y_lift), dy_lift) in stacked.states.iter().zip(&lifted.states).zip(vars) {
        let (y, dy) = split_variational(x);
        let r = norm_inf(&(&y - y_lift)).max(norm_inf(&(&dy - dy_lift)));
        per_step.push(r);
        scale = scale.max(norm_inf(&y)).max(norm_inf(&dy));
        vscale = vscale.max(norm_inf(dy_lift));
    }
    Ok(EquivarianceResidual {
        max_residual: per_step.iter().cloned().fold(0.0, f64::max),
        per_step,
        scale,
        variation_scale: vscale,
    })
}

/// Same comparison for the adaptive Euler scheme on the time-augmented state
/// `(y, s)`.
pub fn adaptive_equivariance_residual<F: VectorField + ?Sized>(
    controller: &AdaptiveController,
    field: &F,
    y0: &Vector,
    dy0: &Vector,
    t0: f64,
    tf: f64,
    h0: f64,
) -> Result<EquivarianceResidual> {
    let run = integrate_adaptive_euler(controller, field, y0, t0, tf, h0, DEFAULT_MAX_ADAPTIVE_STEPS)?;
    let full = adaptive_variations(controller, field, &run, dy0, 0.0)?;
    let naive = adaptive_of_variational(field, &run, dy0, 0.0)?;
    let mut per_step = Vec::with_capacity(full.len());
    let (mut scale, mut vscale) = (0.0f64, 0.0f64);
    for (n, ((dy_a, ds_a, _), (dy_b, ds_b))) in full.iter().zip(&naive).enumerate() {
        per_step.push(norm_inf(&(dy_a - dy_b)).max((ds_a - ds_b).abs()));
        scale = scale.max(norm_inf(&run.bundle.states[n])).max(norm_inf(dy_a));
        vscale = vscale.max(norm_inf(dy_a));
    }
    Ok(EquivarianceResidual {
        max_residual: per_step.iter().cloned().fold(0.0, f64::max),
        per_step,
        scale,
        variation_scale: vscale,
    })
}
