use thiserror::Error;

use crate::semidiscrete::SemiDiscreteSolution;

/// Errors produced by the solvers and measure constructors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty grid")]
    EmptyGrid,

    #[error("non-finite log-density at cell {index}")]
    NonFiniteLogDensity { index: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("zero-mass input")]
    ZeroMass,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid mismatch")]
    GridMismatch,

    /// Backtracking could not find an ascent step. The best iterate found so
    /// far is attached.
    #[error("no-progress: line search step fell below {min_step:e} (grad_norm {grad_norm:e})")]
    NoProgress {
        min_step: f64,
        grad_norm: f64,
        solution: Box<SemiDiscreteSolution>,
    },

    #[error("instance too large: {entries} cost entries exceed cap {cap}")]
    InstanceTooLarge { entries: usize, cap: usize },

    #[error("degenerate weights: weight {weight:e} below {threshold:e}")]
    DegenerateWeights { weight: f64, threshold: f64 },

    #[error("oracle size exceeded: {0}")]
    OracleSizeExceeded(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("step too large: updated precision has eigenvalue {min_eig:e}")]
    StepTooLarge { min_eig: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invariant violated at iteration {iteration}: {what}")]
    InvariantViolation { iteration: usize, what: String },

    #[error("objective diverged at iteration {iteration}: {value:e} vs initial {initial:e}")]
    Diverged {
        iteration: usize,
        value: f64,
        initial: f64,
    },

    #[error("input {input}, iteration {iteration}: {source}")]
    Subsolver {
        input: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in mirror step at iteration {iteration}")]
    NonFiniteUpdate { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
