use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular resolvent: mu = {mu} is not above -r_min = {bound}")]
    SingularResolvent { mu: f64, bound: f64 },

    #[error("lambda = {lambda} is not above lambda_min = {lambda_min}")]
    BelowMinimumPenalty { lambda: f64, lambda_min: f64 },

    #[error("root solver did not converge after {iterations} iterations (x = {x}, residual = {residual:e})")]
    SolverFailure { iterations: usize, x: f64, residual: f64 },

    #[error("branch violation: 1 - phi * tr[Sigma^2 (Sigma + mu)^-2] = {denominator} is not positive")]
    BranchViolation { denominator: f64 },

    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("degenerate shift: beta0 equals beta")]
    DegenerateShift,

    #[error("invalid subsample ratio: psi = {psi} is below phi = {phi}")]
    InvalidSubsampleRatio { psi: f64, phi: f64 },

    #[error("invalid subsample: k = {k} exceeds n = {n}")]
    InvalidSubsample { k: usize, n: usize },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
