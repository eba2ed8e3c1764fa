//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; the `*_json` functions underneath are
//! plain Rust so they can be tested on the host.

use adjoint_lab::config::ProblemConfig;
use adjoint_lab::diagrams::{adaptive_counterexample, conservation_probe, AdaptiveCounterexample, AdaptiveRow};
use adjoint_lab::gradients::{adjoint_order_study, CostFunction};
use adjoint_lab::integrators::{MethodName, OneStepMethod};
use adjoint_lab::semidisc::ProblemKind;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest step count accepted from the page, to keep the tab responsive.
pub const MAX_STEPS: usize = 2000;

fn parse_problem(name: &str) -> Result<ProblemConfig, String> {
    let kind: ProblemKind = serde_json::from_value(json!(name)).map_err(|e| e.to_string())?;
    Ok(ProblemConfig::new(kind))
}

fn parse_method(name: &str) -> Result<OneStepMethod, String> {
    let m: MethodName = name.parse().map_err(|e: adjoint_lab::Error| e.to_string())?;
    m.fixed_step()
        .ok_or_else(|| format!("{} is not a fixed-step method", m.as_str()))
}

fn parse_steps(text: &str) -> Result<Vec<usize>, String> {
    let steps = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("not a step count: {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(big) = steps.iter().find(|&&n| n > MAX_STEPS) {
        return Err(format!("{big} steps is more than the demo allows ({MAX_STEPS})"));
    }
    Ok(steps)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Adjoint error against step size and the fitted slope.
pub fn order_study_json(problem: &str, method: &str, steps: &str, t_final: f64) -> Result<String, String> {
    let built = parse_problem(problem)?.build().map_err(|e| e.to_string())?;
    let method = parse_method(method)?;
    let steps = parse_steps(steps)?;
    let study = adjoint_order_study(
        &method,
        &built.ode,
        &CostFunction::HalfSquaredNorm,
        &built.y0,
        0.0,
        t_final,
        &steps,
    )
    .map_err(|e| e.to_string())?;
    to_json(&study)
}

#[derive(Serialize)]
struct AdaptiveView {
    rows: Vec<AdaptiveRow>,
    constant_residual: f64,
    passed: bool,
}

/// Equivariance residuals and gradients of adaptive Euler on `y' = -y`.
pub fn adaptive_json(h0: f64, gain: f64, t_final: f64, refinements: usize) -> Result<String, String> {
    let cfg = AdaptiveCounterexample {
        h0,
        gain,
        t_final,
        refinements: refinements.min(4),
        ..AdaptiveCounterexample::default()
    };
    let (report, rows) = adaptive_counterexample(&cfg).map_err(|e| e.to_string())?;
    to_json(&AdaptiveView {
        rows,
        constant_residual: report.max_residual,
        passed: report.passed,
    })
}

#[derive(Serialize)]
struct TraceView {
    t: Vec<f64>,
    lifted: Vec<f64>,
    perturbed: Vec<f64>,
    lifted_drift: f64,
    perturbed_drift: f64,
}

/// `<p_n, δq_n>` along the cotangent lift and along an `eps`-perturbed
/// backward recursion.
pub fn conservation_trace_json(
    problem: &str,
    method: &str,
    steps: usize,
    t_final: f64,
    eps: f64,
    seed: u64,
) -> Result<String, String> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must be between 1 and {MAX_STEPS}"));
    }
    let built = parse_problem(problem)?.build().map_err(|e| e.to_string())?;
    let method = parse_method(method)?;
    let probe = conservation_probe(&method, &built.ode, &built.y0, 0.0, t_final, steps, eps, seed)
        .map_err(|e| e.to_string())?;
    to_json(&TraceView {
        t: (0..=steps).map(|k| t_final * k as f64 / steps as f64).collect(),
        lifted: probe.true_series,
        perturbed: probe.perturbed_series,
        lifted_drift: probe.true_drift,
        perturbed_drift: probe.perturbed_drift,
    })
}

#[wasm_bindgen]
pub fn order_study(problem: &str, method: &str, steps: &str, t_final: f64) -> Result<String, JsError> {
    order_study_json(problem, method, steps, t_final).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn adaptive_euler(h0: f64, gain: f64, t_final: f64, refinements: usize) -> Result<String, JsError> {
    adaptive_json(h0, gain, t_final, refinements).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn conservation_trace(
    problem: &str,
    method: &str,
    steps: usize,
    t_final: f64,
    eps: f64,
    seed: u32,
) -> Result<String, JsError> {
    conservation_trace_json(problem, method, steps, t_final, eps, seed.into()).map_err(|e| JsError::new(&e))
}
