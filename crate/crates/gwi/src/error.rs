use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("operation requires a critical model (spectral radius {rho}, tolerance {tol})")]
    NotCritical { rho: f64, tol: f64 },

    #[error("operation requires a subcritical model (spectral radius {rho} >= 1)")]
    NotSubcritical { rho: f64 },

    #[error("population cap exceeded at step {step}: {total} individuals > cap {cap}")]
    PopulationCap { step: usize, total: u64, cap: u64 },

    #[error("matrix power exponent {0} exceeds the supported maximum {1}")]
    PowerTooLarge(u64, u64),

    #[error("matrix is not symmetric: |a12 - a21| = {0}")]
    Asymmetric(f64),

    #[error("matrix is not positive semidefinite: eigenvalue {0}")]
    NotPsd(f64),

    #[error("degenerate offspring construction failed: {0}")]
    DegenerateConstruction(String),

    #[error("stationary second moment matrix is singular: {0}")]
    SingularStationary(String),

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
