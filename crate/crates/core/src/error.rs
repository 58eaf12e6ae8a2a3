use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Exact enumeration would produce more compound atoms than allowed.
    #[error("compound distribution needs {needed} atoms, cap is {cap}; use Monte Carlo instead")]
    CapExceeded { needed: u128, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid payoff model: {0}")]
    InvalidModel(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("invalid risk specification: {0}")]
    InvalidRiskSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("decision period mismatch: distribution compounded over {dist} stages, spec asks for {spec}")]
    PeriodMismatch { dist: u32, spec: u32 },

    #[error("non-positive growth ratio {value} at atom {atom}")]
    NonPositiveReturn { atom: usize, value: f64 },

    #[error("quadrature did not converge: error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureNotConverged { estimate: f64, tolerance: f64 },

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("grid search supports at most 3 alternatives, got {0}")]
    DimensionTooLarge(usize),
}
