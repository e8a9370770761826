use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the region where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Integer or size overflow (block sizes, matrix sizes, spin counts).
    #[error("range error: {0}")]
    Range(String),
    /// A truncated basis or mode sum did not converge.
    #[error("truncation error: {0}")]
    Truncation(String),
    /// Quadratic form is not positive definite.
    #[error("stability error: {0}")]
    Stability(String),
    #[error("sampler tuning failure: {0}")]
    Tuning(String),
    #[error("no bracket found: {0}")]
    BracketNotFound(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input is inconsistent with a Lee-Yang measure.
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("polynomial degree {0} exceeds the supported maximum")]
    Degree(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
