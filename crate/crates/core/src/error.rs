use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("nonlinearity channel is not square: n_v = {n_v}, n_w = {n_w}")]
    ChannelMismatch { n_v: usize, n_w: usize },
    #[error("transfer function is not strictly proper")]
    NotStrictlyProper,
    #[error("transfer function denominator is zero")]
    ZeroDenominator,
    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),
    #[error("lifting horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("matrix is not doubly hyperdominant: {0}")]
    NotDoublyHyperdominant(String),
    #[error("cone violation in {cone}: entry ({row}, {col}) = {value}")]
    ConeViolation {
        cone: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("scaling matrix has negative entry {value} at index {index}")]
    NegativeLambda { index: usize, value: f64 },
    #[error("no finite gain certified: {0}")]
    Infeasible(String),
    #[error("conic solver failure: {status}{}", alpha.map(|a| format!(" (alpha = {a})")).unwrap_or_default())]
    SolverFailure { status: String, alpha: Option<f64> },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("fixed-point iteration for the loop equation did not converge at step {step}")]
    FixedPointDivergence { step: usize },
    #[error("trial {0} drew an all-zero disturbance")]
    ZeroInput(usize),
    #[error("spectral radius never reaches 1 on [0, {0}]")]
    NoCrossing(f64),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
