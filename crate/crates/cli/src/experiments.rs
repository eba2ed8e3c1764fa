//! One function per experiment. Each returns the CSV table and the JSON
//! summary without touching the filesystem.

use adjoint_lab::diagrams::{
    adaptive_counterexample, equilibrium_report, verify_fully_discrete_commutation, verify_precondition_identity,
    AdaptiveCounterexample, DiagramReport,
};
use adjoint_lab::gradients::{adjoint_order_study, discrete_gradient, fd_gradient_oracle, CostFunction};
use adjoint_lab::integrators::{backpropagate, integrate_variational, OneStepMethod};
use adjoint_lab::{DualityPairing, Matrix, PairingKind, Result, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Experiment, Resolved};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Floats as 17 significant digits, which round-trip exactly.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub table: Table,
    pub summary: Value,
}

pub fn run(cfg: &Resolved) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Conservation => conservation(cfg),
        Experiment::DtoVsOtd => dto_vs_otd(cfg),
        Experiment::GradientCheck => gradient_check(cfg),
        Experiment::OrderStudy => order_study(cfg),
        Experiment::AdaptiveCounterexample => adaptive(cfg),
        Experiment::Precondition => precondition(cfg),
        Experiment::Equilibrium => equilibrium(cfg),
    }
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// `I + 0.1 R` with `R` uniform on `[-1, 1]`: a well-conditioned general pairing.
fn general_matrix(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    Matrix::identity(n, n) + Matrix::from_fn(n, n, |_, _| rng.gen_range(-0.1..0.1))
}

fn pairing(cfg: &Resolved) -> Result<DualityPairing> {
    let n = cfg.built.ode.dim();
    match cfg.pairing {
        PairingKind::Standard => DualityPairing::standard(n),
        PairingKind::MassInduced => DualityPairing::mass_induced(cfg.built.ode.mass().clone()),
        PairingKind::General => DualityPairing::general(general_matrix(n, cfg.seed)),
    }
}

fn summary(report: &DiagramReport) -> Value {
    serde_json::to_value(report).expect("reports serialize")
}

fn per_step_table(report: &DiagramReport, tf: f64) -> Table {
    let n = report.per_step.len().saturating_sub(1).max(1);
    Table {
        header: &["step", "t", "residual"],
        rows: report
            .per_step
            .iter()
            .enumerate()
            .map(|(k, r)| vec![Cell::Int(k), Cell::Float(tf * k as f64 / n as f64), Cell::Float(*r)])
            .collect(),
    }
}

fn conservation(cfg: &Resolved) -> Result<Outcome> {
    let ode = &cfg.built.ode;
    let n = ode.dim();
    let steps = cfg.steps[0];
    let pairing = pairing(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dq0 = random_vector(&mut rng, n);
    let p_terminal = random_vector(&mut rng, n);
    let fwd = integrate_variational(&cfg.method, ode, &cfg.built.y0, &dq0, 0.0, cfg.t_final, steps)?;
    let bp = backpropagate(&cfg.method, ode, &fwd, &p_terminal, &pairing)?;
    let series = bp.invariant_series.clone().expect("backpropagation records the invariant");
    let scale = bp
        .adjoints
        .iter()
        .flatten()
        .zip(bp.variations.iter().flatten())
        .map(|(p, dq)| p.norm() * (pairing.matrix() * dq).norm())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let last = *series.last().unwrap();
    let drift: Vec<f64> = series.iter().map(|v| (v - last).abs() / scale).collect();
    let tolerance = match cfg.method {
        OneStepMethod::ImplicitMidpoint(_) => 1e-9,
        _ => 1e-12,
    };
    let report = DiagramReport::new(
        format!("conservation/{}/{}", cfg.method.name(), pairing.kind()),
        drift.clone(),
        tolerance,
        Some(cfg.seed),
    )
    .metric("invariant_terminal", last);
    let rows = bp
        .times
        .iter()
        .zip(&series)
        .zip(&drift)
        .enumerate()
        .map(|(k, ((t, i), d))| vec![Cell::Int(k), Cell::Float(*t), Cell::Float(*i), Cell::Float(*d)])
        .collect();
    Ok(Outcome {
        passed: report.passed,
        table: Table {
            header: &["step", "t", "invariant", "drift"],
            rows,
        },
        summary: summary(&report),
    })
}

fn dto_vs_otd(cfg: &Resolved) -> Result<Outcome> {
    let pairing = pairing(cfg)?;
    let report = verify_fully_discrete_commutation(
        &cfg.method,
        &cfg.built.ode,
        &cfg.built.y0,
        &pairing,
        0.0,
        cfg.t_final,
        cfg.steps[0],
        cfg.seed,
    )?;
    Ok(Outcome {
        passed: report.passed,
        table: per_step_table(&report, cfg.t_final),
        summary: summary(&report),
    })
}

fn gradient_check(cfg: &Resolved) -> Result<Outcome> {
    let ode = &cfg.built.ode;
    let cost = CostFunction::HalfSquaredNorm;
    let steps = cfg.steps[0];
    let sens = discrete_gradient(&cfg.method, ode, &cost, &cfg.built.y0, 0.0, cfg.t_final, steps, None)?;
    let fd = fd_gradient_oracle(&cfg.method, ode, &cost, &cfg.built.y0, 0.0, cfg.t_final, steps, cfg.eps)?;
    let scale = fd.amax().max(f64::MIN_POSITIVE);
    let errors: Vec<f64> = sens.gradient.iter().zip(fd.iter()).map(|(a, b)| (a - b).abs()).collect();
    let drift_tolerance = match cfg.method {
        OneStepMethod::ImplicitMidpoint(_) => 1e-9,
        _ => 1e-12,
    };
    let report = DiagramReport::new(
        format!("gradient-check/{}", cfg.method.name()),
        errors.iter().map(|e| e / scale).collect(),
        1e-6,
        Some(cfg.seed),
    )
    .metric("fd_eps", cfg.eps)
    .metric("invariant_drift", sens.invariant_drift)
    .note("residual: max |adjoint - central difference| / max |central difference|");
    let rows = sens
        .gradient
        .iter()
        .zip(fd.iter())
        .zip(&errors)
        .enumerate()
        .map(|(i, ((a, b), e))| vec![Cell::Int(i), Cell::Float(*a), Cell::Float(*b), Cell::Float(*e)])
        .collect();
    Ok(Outcome {
        passed: report.passed && sens.invariant_drift <= drift_tolerance,
        table: Table {
            header: &["component", "adjoint", "finite_difference", "abs_error"],
            rows,
        },
        summary: json!({ "report": report, "sensitivity": sens }),
    })
}

fn order_study(cfg: &Resolved) -> Result<Outcome> {
    let st = adjoint_order_study(
        &cfg.method,
        &cfg.built.ode,
        &CostFunction::HalfSquaredNorm,
        &cfg.built.y0,
        0.0,
        cfg.t_final,
        &cfg.steps,
    )?;
    let deviation = (st.slope - st.expected_order as f64).abs();
    let report = DiagramReport::new(format!("order-study/{}", st.method), vec![deviation], 0.3, None)
        .metric("slope", st.slope)
        .metric("expected_order", st.expected_order as f64)
        .metric("reference_steps", st.reference_steps as f64)
        .note("residual: |fitted log-log slope - method order|");
    let rows = st
        .rows
        .iter()
        .map(|r| vec![Cell::Int(r.n_steps), Cell::Float(r.h), Cell::Float(r.error)])
        .collect();
    Ok(Outcome {
        passed: report.passed,
        table: Table {
            header: &["n_steps", "h", "error"],
            rows,
        },
        summary: summary(&report),
    })
}

fn adaptive(cfg: &Resolved) -> Result<Outcome> {
    let setup = AdaptiveCounterexample {
        t_final: cfg.t_final,
        h0: cfg.h0,
        gain: cfg.gain,
        ..AdaptiveCounterexample::default()
    };
    let (report, rows) = adaptive_counterexample(&setup)?;
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Float(r.h0),
                Cell::Int(r.n_steps),
                Cell::Float(r.residual),
                Cell::Float(r.constant_residual),
                Cell::Float(r.gradient),
                Cell::Float(r.frozen_step_gradient),
                Cell::Float(r.continuous_gradient),
            ]
        })
        .collect();
    Ok(Outcome {
        passed: report.passed,
        table: Table {
            header: &[
                "h0",
                "n_steps",
                "residual",
                "constant_residual",
                "gradient",
                "frozen_step_gradient",
                "continuous_gradient",
            ],
            rows,
        },
        summary: summary(&report),
    })
}

fn precondition(cfg: &Resolved) -> Result<Outcome> {
    let p = pairing(cfg)?.matrix().clone();
    let report = verify_precondition_identity(
        &cfg.method,
        &cfg.built.ode,
        &cfg.built.y0,
        &p,
        0.0,
        cfg.t_final,
        cfg.steps[0],
        cfg.seed,
    )?;
    Ok(Outcome {
        passed: report.passed,
        table: per_step_table(&report, cfg.t_final),
        summary: summary(&report),
    })
}

fn equilibrium(cfg: &Resolved) -> Result<Outcome> {
    let ode = &cfg.built.ode;
    let pairings = [
        DualityPairing::standard(ode.dim())?,
        DualityPairing::mass_induced(ode.mass().clone())?,
    ];
    let h = cfg.t_final / cfg.steps[0] as f64;
    let report = equilibrium_report(&cfg.method, ode, &pairings, h)?;
    let mut rows = vec![vec![Cell::Text("state".into()), Cell::Float(report.max_residual)]];
    for (key, value) in &report.metrics {
        rows.push(vec![Cell::Text(key.clone()), Cell::Float(*value)]);
    }
    Ok(Outcome {
        passed: report.passed,
        table: Table {
            header: &["quantity", "value"],
            rows,
        },
        summary: summary(&report),
    })
}
