use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("unknown subdomain label {0}")]
    UnknownSubdomain(usize),

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("linear solve did not reach tolerance: relative residual {residual:e} > {tol:e}")]
    SolveTolerance { residual: f64, tol: f64 },

    #[error("iteration did not converge after {iterations} steps (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("parameter outside admissible set: {0}")]
    Inadmissible(String),

    #[error("derivative order {0} is not supported")]
    UnsupportedOrder(usize),

    #[error("missing lower-order sensitivity {0}")]
    MissingSensitivity(String),

    #[error("coefficient function {index} is not positive at this parameter ({value:e})")]
    NonPositiveTheta { index: usize, value: f64 },

    #[error("requested rank {requested} exceeds numerical rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("empty snapshot set")]
    EmptySnapshots,

    #[error("reduced system is singular")]
    SingularReduced,

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error("evaluation failed at x = {x:?}: {message}")]
    Evaluation { x: Vec<f64>, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
