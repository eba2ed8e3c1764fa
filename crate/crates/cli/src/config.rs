//! Experiment configuration: JSON file, then `ADJOINT_LAB_SEED`, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use adjoint_lab::config::{BuiltProblem, ProblemConfig};
use adjoint_lab::diagrams::DEFAULT_SEED;
use adjoint_lab::gradients::REFERENCE_REFINEMENT;
use adjoint_lab::integrators::{MethodName, OneStepMethod};
use adjoint_lab::PairingKind;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "ADJOINT_LAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Conservation,
    DtoVsOtd,
    GradientCheck,
    OrderStudy,
    AdaptiveCounterexample,
    Precondition,
    Equilibrium,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Conservation => "conservation",
            Experiment::DtoVsOtd => "dto-vs-otd",
            Experiment::GradientCheck => "gradient-check",
            Experiment::OrderStudy => "order-study",
            Experiment::AdaptiveCounterexample => "adaptive-counterexample",
            Experiment::Precondition => "precondition",
            Experiment::Equilibrium => "equilibrium",
        }
    }

    fn default_problem(&self) -> &'static str {
        match self {
            Experiment::Conservation => "heat",
            Experiment::Equilibrium => "advection",
            _ => "burgers",
        }
    }

    fn default_steps(&self) -> Vec<usize> {
        match self {
            Experiment::Conservation | Experiment::Equilibrium => vec![100],
            Experiment::OrderStudy => vec![20, 40, 80, 160],
            _ => vec![20],
        }
    }

    fn default_t_final(&self) -> f64 {
        match self {
            Experiment::AdaptiveCounterexample => 1.0,
            _ => 0.1,
        }
    }

    fn default_pairing(&self) -> PairingKind {
        match self {
            Experiment::Precondition => PairingKind::General,
            _ => PairingKind::Standard,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Arguments of `adjoint-lab run`.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default `results`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// standard, mass or general.
    #[arg(long)]
    pub pairing: Option<String>,
    /// Number of unknowns.
    #[arg(long)]
    pub n: Option<usize>,
    /// Step counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference increment.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Initial step of the adaptive controller.
    #[arg(long)]
    pub h0: Option<f64>,
    /// Gain of the state-dependent controller.
    #[arg(long)]
    pub gain: Option<f64>,
}

impl RunArgs {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            config: None,
            out: None,
            problem: None,
            method: None,
            pairing: None,
            n: None,
            steps: None,
            t_final: None,
            seed: None,
            eps: None,
            h0: None,
            gain: None,
        }
    }
}

/// The JSON shape. Every field is optional; missing ones take the
/// experiment's defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    experiment: Option<Experiment>,
    problem: Option<ProblemConfig>,
    method: Option<String>,
    pairing: Option<PairingKind>,
    steps: Option<Vec<usize>>,
    t_final: Option<f64>,
    seed: Option<u64>,
    eps: Option<f64>,
    h0: Option<f64>,
    gain: Option<f64>,
    out_path: Option<PathBuf>,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: Experiment,
    pub problem: ProblemConfig,
    pub built: BuiltProblem,
    pub method: OneStepMethod,
    pub pairing: PairingKind,
    pub steps: Vec<usize>,
    pub t_final: f64,
    pub seed: u64,
    pub eps: f64,
    pub h0: f64,
    pub gain: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn read_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(invalid(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(invalid(format!("{}: {e}", path.display()))),
    }
}

/// Merges file, environment seed and flags, applies defaults and checks
/// everything that can be checked before running.
pub fn resolve(args: &RunArgs, env_seed: Option<&str>) -> Result<Resolved, ConfigError> {
    let mut map = match &args.config {
        Some(path) => read_file(path)?,
        None => Map::new(),
    };
    let experiment = args.experiment;
    if let Some(v) = map.get("experiment") {
        let named: Experiment =
            serde_json::from_value(v.clone()).map_err(|err| invalid(format!("experiment: {err}")))?;
        if named != experiment {
            return Err(invalid(format!("config names experiment {named}, command line {experiment}")));
        }
    }
    map.insert("experiment".into(), Value::String(experiment.as_str().into()));

    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        map.insert("seed".into(), seed.into());
    }
    let overrides: [(&str, Option<Value>); 8] = [
        ("method", args.method.clone().map(Value::from)),
        ("pairing", args.pairing.clone().map(Value::from)),
        ("steps", args.steps.clone().map(Value::from)),
        ("t_final", args.t_final.map(Value::from)),
        ("seed", args.seed.map(Value::from)),
        ("eps", args.eps.map(Value::from)),
        ("h0", args.h0.map(Value::from)),
        ("gain", args.gain.map(Value::from)),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            map.insert(key.into(), v);
        }
    }

    let problem = map
        .entry("problem")
        .or_insert_with(|| Value::Object(Map::new()));
    let Value::Object(problem) = problem else {
        return Err(invalid("problem must be an object"));
    };
    if let Some(kind) = &args.problem {
        problem.insert("problem".into(), Value::from(kind.as_str()));
    }
    problem
        .entry("problem")
        .or_insert_with(|| Value::from(experiment.default_problem()));
    if let Some(n) = args.n {
        problem.insert("n".into(), n.into());
    }

    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(map)).map_err(|e| invalid(e.to_string()))?;
    finish(cfg, args.out.clone())
}

fn finish(cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<Resolved, ConfigError> {
    let experiment = cfg.experiment.expect("experiment is always set");
    let problem = cfg.problem.expect("problem block is always present");
    let built = problem.build().map_err(|e| invalid(e.to_string()))?;

    let name: MethodName = cfg
        .method
        .as_deref()
        .unwrap_or("rk4")
        .parse()
        .map_err(|e: adjoint_lab::Error| invalid(e.to_string()))?;
    let method = match name.fixed_step() {
        Some(m) => m,
        // the adaptive scheme only appears in its own experiment, which
        // ignores the method setting
        None if experiment == Experiment::AdaptiveCounterexample => OneStepMethod::ExplicitEuler,
        None => {
            return Err(invalid(format!(
                "{experiment} needs a fixed-step method, got {}",
                name.as_str()
            )))
        }
    };

    let steps = cfg.steps.unwrap_or_else(|| experiment.default_steps());
    if steps.is_empty() || steps.contains(&0) {
        return Err(invalid("steps must be a non-empty list of positive integers"));
    }
    if experiment == Experiment::OrderStudy {
        if steps.len() < 3 {
            return Err(invalid(format!("order-study needs at least 3 step counts, got {}", steps.len())));
        }
        let n_ref = REFERENCE_REFINEMENT * steps.iter().max().unwrap();
        if let Some(bad) = steps.iter().find(|&&n| !n_ref.is_multiple_of(n)) {
            return Err(invalid(format!("step count {bad} does not divide the reference grid of {n_ref} steps")));
        }
    }

    let t_final = cfg.t_final.unwrap_or_else(|| experiment.default_t_final());
    let eps = cfg.eps.unwrap_or(match experiment {
        Experiment::Conservation => 1e-4,
        _ => 1e-6,
    });
    let h0 = cfg.h0.unwrap_or(0.1);
    let gain = cfg.gain.unwrap_or(0.1);
    for (key, value) in [("t_final", t_final), ("eps", eps), ("h0", h0)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("{key} must be positive and finite, got {value}")));
        }
    }
    if !(gain.is_finite() && gain >= 0.0) {
        return Err(invalid(format!("gain must be non-negative and finite, got {gain}")));
    }

    Ok(Resolved {
        experiment,
        problem,
        built,
        method,
        pairing: cfg.pairing.unwrap_or_else(|| experiment.default_pairing()),
        steps,
        t_final,
        seed: cfg.seed.unwrap_or(DEFAULT_SEED),
        eps,
        h0,
        gain,
        out: out.or(cfg.out_path).unwrap_or_else(|| PathBuf::from("results")),
    })
}
