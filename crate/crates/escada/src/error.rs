//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Input point dimension does not match the kernel's lengthscale vector.
    #[error("dimension mismatch: point has {got} dimensions, kernel expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The kernel metric radicand was negative beyond tolerance, which
    /// indicates an invalid kernel rather than roundoff.
    #[error("kernel metric radicand {radicand} is negative beyond tolerance")]
    InvalidMetric { radicand: f64 },

    /// Requested metric radius at or above the supremum attainable by the
    /// kernel metric; the caller treats the corresponding dose radius as
    /// unbounded within the dose domain.
    #[error("metric radius {rho} saturates the kernel metric (supremum {sup})")]
    MetricSaturation { rho: f64, sup: f64 },

    /// An observation or parameter was NaN or infinite.
    #[error("non-finite value for {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    /// Cholesky factorization failed even after the jitter retry.
    #[error("factorization breakdown at n={n}: matrix not positive definite beyond jitter")]
    Factorization { n: usize },

    /// A predictive variance came out negative beyond tolerance.
    #[error("numerical failure: {what} = {value}")]
    NumericalFailure { what: &'static str, value: f64 },

    /// The dose discretization would be degenerate (metric step unreachable).
    #[error("degenerate dose grid: metric step {step} >= attainable supremum {sup}")]
    DegenerateGrid { step: f64, sup: f64 },

    /// The admissible dose set for a recommendation round was empty.
    #[error("degenerate admissible set: {context}")]
    DegenerateAdmissible { context: String },

    /// No truly safe dose exists for the requested oracle initialization.
    #[error("no safe initial dose exists for this context")]
    NoSafeDose,

    /// Dose outside the configured domain.
    #[error("dose {dose} outside domain [0, {max_dose}]")]
    DoseOutOfDomain { dose: f64, max_dose: f64 },

    /// Configuration file problems, reported exhaustively.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
