use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("matrix is singular or numerically singular ({context}, reciprocal condition {rcond:.3e})")]
    Singular { context: &'static str, rcond: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton iteration failed at step {step} after {iterations} iterations (residual {residual:.3e})")]
    NewtonFailed {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("solution became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("step limit of {max_steps} exceeded before reaching t = {t_final}")]
    StepLimit { max_steps: usize, t_final: f64 },

    #[error("trajectory is missing {0}")]
    MissingTrajectory(&'static str),
}
