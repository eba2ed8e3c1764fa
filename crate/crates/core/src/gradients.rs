//! Discrete gradients of terminal costs, finite-difference oracles and
//! adjoint order studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::integrators::{backpropagate, integrate_forward, integrate_variational, OneStepMethod};
use crate::linalg::{check_dim, norm_inf, Matrix, Vector};
use crate::pairings::DualityPairing;

/// Terminal cost `C(q_N)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// `|q|^2 / 2`
    HalfSquaredNorm,
    /// `Σ w_i q_i^2 / 2`
    WeightedTerminal(Vector),
}

impl CostFunction {
    fn check(&self, dim: usize) -> Result<()> {
        match self {
            CostFunction::HalfSquaredNorm => Ok(()),
            CostFunction::WeightedTerminal(w) => check_dim("cost weights", dim, w.len()),
        }
    }

    pub fn value(&self, q: &Vector) -> f64 {
        match self {
            CostFunction::HalfSquaredNorm => 0.5 * q.norm_squared(),
            CostFunction::WeightedTerminal(w) => 0.5 * w.iter().zip(q.iter()).map(|(wi, qi)| wi * qi * qi).sum::<f64>(),
        }
    }

    /// `DC(q)` as a covector in the standard pairing.
    pub fn gradient(&self, q: &Vector) -> Vector {
        match self {
            CostFunction::HalfSquaredNorm => q.clone(),
            CostFunction::WeightedTerminal(w) => w.component_mul(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub gradient: Vec<f64>,
    pub cost: f64,
    /// Relative drift of `<p_n, δq_n>` along the run that produced `gradient`.
    pub invariant_drift: f64,
    pub method_order_estimate: Option<f64>,
}

/// Probe direction used for the in-run conservation check.
pub fn probe_direction(dim: usize) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let v = Vector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    let n = v.norm();
    v / n
}

/// Runs forward, sets `p_N = DC(q_N)` and backpropagates. The result is the
/// exact gradient of `C(Φ ∘ … ∘ Φ(q_0))`.
///
/// With `coords` set, the gradient is expressed as a covector of that pairing
/// (for a mass-induced pairing, `M^{-T}` times the standard one).
#[allow(clippy::too_many_arguments)]
pub fn discrete_gradient<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    cost: &CostFunction,
    q0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
    coords: Option<&DualityPairing>,
) -> Result<SensitivityResult> {
    cost.check(field.dim())?;
    let dq0 = probe_direction(field.dim());
    let fwd = integrate_variational(method, field, q0, &dq0, t0, tf, n_steps)?;
    let standard = DualityPairing::standard(field.dim())?;
    let qn = fwd.final_state();
    let terminal = cost.gradient(qn);
    let bp = backpropagate(method, field, &fwd, &terminal, &standard)?;
    let p0 = bp.adjoints.as_ref().expect("backpropagate stores adjoints")[0].clone();
    let gradient = match coords {
        Some(p) => {
            check_dim("gradient pairing", field.dim(), p.dim())?;
            p.from_standard(&p0)
        }
        None => p0,
    };
    Ok(SensitivityResult {
        gradient: gradient.iter().copied().collect(),
        cost: cost.value(qn),
        invariant_drift: bp.invariant_drift(&standard).unwrap_or(0.0),
        method_order_estimate: None,
    })
}

/// `C(q_N)` of the fully discrete flow started at `q0`.
pub fn discrete_objective<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    cost: &CostFunction,
    q0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
) -> Result<f64> {
    cost.check(field.dim())?;
    let tr = integrate_forward(method, field, q0, t0, tf, n_steps)?;
    Ok(cost.value(tr.final_state()))
}

/// Central-difference gradient of the fully discrete objective.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient_oracle<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    cost: &CostFunction,
    q0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
    eps: f64,
) -> Result<Vector> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference eps must be positive".into()));
    }
    check_dim("initial state", field.dim(), q0.len())?;
    let comps = map_indices(q0.len(), |i| {
        let mut e = Vector::zeros(q0.len());
        e[i] = 1.0;
        fd_directional(method, field, cost, q0, &e, t0, tf, n_steps, eps)
    });
    Ok(Vector::from_vec(comps.into_iter().collect::<Result<Vec<_>>>()?))
}

/// `(C(q0 + eps d) - C(q0 - eps d)) / (2 eps)`
#[allow(clippy::too_many_arguments)]
pub fn fd_directional<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    cost: &CostFunction,
    q0: &Vector,
    direction: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
    eps: f64,
) -> Result<f64> {
    let plus = discrete_objective(method, field, cost, &(q0 + direction * eps), t0, tf, n_steps)?;
    let minus = discrete_objective(method, field, cost, &(q0 - direction * eps), t0, tf, n_steps)?;
    Ok((plus - minus) / (2.0 * eps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub n_steps: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub method: String,
    pub expected_order: u32,
    pub rows: Vec<OrderRow>,
    pub slope: f64,
    pub reference_steps: usize,
}

pub const REFERENCE_REFINEMENT: usize = 16;

/// Adjoint error `max_n |p_n - p_ref(t_n)|_inf` for each step count, against
/// cotangent-lifted RK4 on a grid 16 times finer than the finest one, and
/// the least-squares log-log slope of error against `h`.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_order_study<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    cost: &CostFunction,
    q0: &Vector,
    t0: f64,
    tf: f64,
    step_counts: &[usize],
) -> Result<OrderStudy> {
    if step_counts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "an order study needs at least 3 step counts, got {}",
            step_counts.len()
        )));
    }
    cost.check(field.dim())?;
    let n_max = *step_counts.iter().max().unwrap();
    let n_ref = REFERENCE_REFINEMENT * n_max;
    if let Some(bad) = step_counts.iter().find(|&&n| n == 0 || !n_ref.is_multiple_of(n)) {
        return Err(Error::InvalidArgument(format!(
            "step count {bad} does not divide the reference grid of {n_ref} steps"
        )));
    }
    let standard = DualityPairing::standard(field.dim())?;
    let reference = {
        let rk4 = OneStepMethod::Rk4;
        let fwd = integrate_forward(&rk4, field, q0, t0, tf, n_ref)?;
        let terminal = cost.gradient(fwd.final_state());
        backpropagate(&rk4, field, &fwd, &terminal, &standard)?
            .adjoints
            .expect("backpropagate stores adjoints")
    };
    let rows = map_indices(step_counts.len(), |k| -> Result<OrderRow> {
        let n = step_counts[k];
        let fwd = integrate_forward(method, field, q0, t0, tf, n)?;
        let terminal = cost.gradient(fwd.final_state());
        let adj = backpropagate(method, field, &fwd, &terminal, &standard)?
            .adjoints
            .expect("backpropagate stores adjoints");
        let stride = n_ref / n;
        let error = adj
            .iter()
            .enumerate()
            .map(|(i, p)| norm_inf(&(p - &reference[i * stride])))
            .fold(0.0, f64::max);
        Ok(OrderRow {
            n_steps: n,
            h: (tf - t0) / n as f64,
            error,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(OrderStudy {
        method: method.name().to_string(),
        expected_order: method.order(),
        slope: loglog_slope(&hs, &errs)?,
        rows,
        reference_steps: n_ref,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("log-log fit", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("a slope fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("log-log fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Runs `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Jacobian of the discrete flow `q_0 -> q_N`, assembled column by column
/// from tangent runs. Used by tests and small demos only.
pub fn flow_jacobian<F: VectorField + ?Sized>(
    method: &OneStepMethod,
    field: &F,
    q0: &Vector,
    t0: f64,
    tf: f64,
    n_steps: usize,
) -> Result<Matrix> {
    let n = q0.len();
    let cols = map_indices(n, |i| {
        let mut e = Vector::zeros(n);
        e[i] = 1.0;
        integrate_variational(method, field, q0, &e, t0, tf, n_steps)
            .map(|tr| tr.variations.expect("variational run stores variations").pop().unwrap())
    });
    let mut out = Matrix::zeros(n, n);
    for (i, c) in cols.into_iter().enumerate() {
        out.set_column(i, &c?);
    }
    Ok(out)
}
