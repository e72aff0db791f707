use thiserror::Error;

/// Errors produced by scenario loading, the response engine, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario document failed schema or invariant validation.
    /// `field` is the dotted path of the offending entry.
    #[error("scenario error: {field} — {message}")]
    Scenario { field: String, message: String },

    /// The dual bisection did not reach the neutrality tolerance within the
    /// iteration cap; usually the tolerance is too tight for floating point.
    #[error("demand response did not converge for cluster {cluster} after {iterations} bisection steps (residual {residual:e})")]
    NonConvergence {
        cluster: usize,
        iterations: usize,
        residual: f64,
    },

    /// A brute-force enumeration would exceed its point cap.
    #[error("instance too large to enumerate: {points:e} grid points exceeds cap {cap:e}")]
    InstanceTooLarge { points: f64, cap: f64 },

    /// The binary pattern enumeration cap was exceeded.
    #[error("pattern enumeration refused: {binaries} binaries exceeds cap {cap}")]
    EnumerationCap { binaries: usize, cap: usize },

    /// A variable assignment violates a model row beyond tolerance.
    #[error("assignment infeasible: row {row} violated by {violation:e}")]
    InfeasibleAssignment { row: String, violation: f64 },

    /// Model construction was handed inconsistent data.
    #[error("model error: {0}")]
    Model(String),

    /// The LP core hit a numerical failure (singular basis, iteration cap).
    #[error("numerical failure in LP core: {0}")]
    Numerical(String),

    /// No grid point of the breakpoint oracle admits a feasible base price.
    #[error("oracle grid has no feasible point; smallest interval shortfall {shortfall:e} at q = {nearest:?}")]
    EmptyOracleGrid { shortfall: f64, nearest: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn scenario(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
