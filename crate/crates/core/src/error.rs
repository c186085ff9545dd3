use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("characteristic root {index} could not be bracketed: {reason}")]
    RootBracket { index: usize, reason: String },

    #[error("mode {mode} has b*L = {root:.3}, hyperbolic terms overflow f64")]
    ModeOverflow { mode: usize, root: f64 },

    #[error("sensor location {x} m lies outside the beam [0, {length}] m")]
    SensorOutOfRange { x: f64, length: f64 },

    #[error("time step {dt:e} s violates the RK4 accuracy bound (dt * omega_max = {product:.3} >= {limit})")]
    StepTooLarge { dt: f64, product: f64, limit: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("relaxation infeasible: {0}")]
    Infeasible(String),

    #[error("rounding failed: {0}")]
    Rounding(String),

    #[error("filter failure at step {step}: {reason}")]
    Filter { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
