//! JSON problem descriptions.
//!
//! ```json
//! { "problem": "burgers", "bc": "dirichlet-zero", "nu": 0.1, "n": 9,
//!   "initial": { "profile": "sine", "amplitude": 1.0, "mode": 1 } }
//! ```
//!
//! `n` is the number of unknowns. For Galerkin assembly with Dirichlet data
//! this means `n + 1` elements; for periodic data, `n` elements. Finite
//! differences use `n + 2` grid points (Dirichlet) or `n` (periodic).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::semidisc::{
    assemble_finite_difference, assemble_galerkin, BoundaryCondition, EvolutionProblem, InitialProfile,
    ProblemKind, SemiDiscreteOde,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    #[default]
    Galerkin,
    #[serde(alias = "fd")]
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    /// Defaults to periodic for advection, Dirichlet otherwise.
    #[serde(default)]
    pub bc: Option<BoundaryCondition>,
    /// Defaults to 1 for heat, 0.1 for Burgers, 0 for advection.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "default_speed")]
    pub a: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default = "default_initial")]
    pub initial: InitialProfile,
}

fn default_speed() -> f64 {
    1.0
}

fn default_n() -> usize {
    9
}

fn default_initial() -> InitialProfile {
    InitialProfile::Sine {
        amplitude: 1.0,
        mode: 1,
    }
}

impl ProblemConfig {
    pub fn new(problem: ProblemKind) -> Self {
        Self {
            problem,
            bc: None,
            nu: None,
            a: default_speed(),
            n: default_n(),
            discretization: Discretization::Galerkin,
            initial: default_initial(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("problem config: {e}")))
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.bc.unwrap_or(match self.problem {
            ProblemKind::Advection => BoundaryCondition::Periodic,
            _ => BoundaryCondition::DirichletZero,
        })
    }

    pub fn diffusion(&self) -> f64 {
        self.nu.unwrap_or(match self.problem {
            ProblemKind::Heat => 1.0,
            ProblemKind::Burgers => 0.1,
            ProblemKind::Advection => 0.0,
        })
    }

    pub fn evolution_problem(&self) -> Result<EvolutionProblem> {
        EvolutionProblem::new(
            self.problem,
            self.boundary(),
            self.diffusion(),
            self.a,
            self.initial.clone(),
        )
    }

    /// Assembles the semi-discrete system and samples the initial state.
    pub fn build(&self) -> Result<BuiltProblem> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let problem = self.evolution_problem()?;
        let periodic = problem.bc == BoundaryCondition::Periodic;
        let (ode, nodes, y0) = match self.discretization {
            Discretization::Galerkin => {
                let n_elements = if periodic { self.n } else { self.n + 1 };
                let (disc, ode) = assemble_galerkin(&problem, n_elements)?;
                let y0 = disc.initial_state();
                (ode, disc.nodes, y0)
            }
            Discretization::FiniteDifference => {
                let n_points = if periodic { self.n } else { self.n + 2 };
                let (grid, ode) = assemble_finite_difference(&problem, n_points)?;
                let y0 = grid.sample(&problem.initial);
                (ode, grid.nodes, y0)
            }
        };
        Ok(BuiltProblem {
            problem,
            ode,
            nodes,
            y0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: EvolutionProblem,
    pub ode: SemiDiscreteOde,
    pub nodes: Vec<f64>,
    pub y0: Vector,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let cfg = ProblemConfig::from_json(
            r#"{"problem": "burgers", "nu": 0.1, "n": 9,
                "initial": {"profile": "gaussian", "center": 0.4, "width": 0.1}}"#,
        )
        .unwrap();
        assert_eq!(cfg.boundary(), BoundaryCondition::DirichletZero);
        let built = cfg.build().unwrap();
        assert_eq!(built.ode.dim(), 9);
        assert_eq!(built.y0.len(), 9);

        let adv = ProblemConfig {
            n: 16,
            ..ProblemConfig::new(ProblemKind::Advection)
        };
        assert_eq!(adv.build().unwrap().ode.dim(), 16);
        let fd = ProblemConfig {
            discretization: Discretization::FiniteDifference,
            ..ProblemConfig::new(ProblemKind::Heat)
        };
        assert_eq!(fd.build().unwrap().ode.dim(), 9);
    }

    #[test]
    fn rejects_unknown_values() {
        let err = ProblemConfig::from_json(r#"{"problem": "wave"}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("heat") && msg.contains("burgers"), "{msg}");
        assert!(ProblemConfig::from_json(r#"{"problem": "heat", "colour": 1}"#).is_err());
        let bad = ProblemConfig {
            nu: Some(0.0),
            ..ProblemConfig::new(ProblemKind::Heat)
        };
        assert!(bad.build().is_err());
    }
}
