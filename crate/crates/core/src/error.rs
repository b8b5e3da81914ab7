use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} has non-finite entries")]
    NonFinite { what: &'static str },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("gain block matrix is singular")]
    SingularGainBlock,

    /// Raised when a Riccati weight (Δ1 or Δ2) loses positive definiteness.
    #[error("attenuation level infeasible: {which} not positive definite (min eigenvalue {min_eigenvalue:e})")]
    GammaInfeasible {
        which: &'static str,
        min_eigenvalue: f64,
    },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    #[error("zero disturbance energy")]
    ZeroDisturbanceEnergy,

    #[error(
        "insufficient excitation: smallest singular value {smallest:e} vs largest {largest:e}"
    )]
    InsufficientExcitation { smallest: f64, largest: f64 },

    #[error("too few data tuples: {rows} rows for {unknowns} unknowns")]
    TooFewTuples { rows: usize, unknowns: usize },

    #[error("normal equations are singular")]
    SingularNormalEquations,

    #[error("invalid probing schedule: {0}")]
    InvalidProbe(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory oracle failure: {0}")]
    Oracle(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
