use thiserror::Error;

/// Errors raised by the model, estimation and inference routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("tau is singular at beta = {beta}: denominator {denominator:e}")]
    SingularTau { beta: f64, denominator: f64 },

    #[error("empty cross-section: lower end {lo} exceeds upper end {hi}")]
    EmptyCrossSection { lo: f64, hi: f64 },

    #[error("reparameterization is not invertible: {0}")]
    NotInvertible(String),

    #[error("invalid structural parameters: {0}")]
    InvalidStructural(String),

    #[error("insufficient data: n = {n} observations for p = {p} measures (need n > p + 1)")]
    InsufficientData { n: usize, p: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteData { row: usize, col: usize },

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("restricted parameter space is infeasible: {0}")]
    InfeasibleRestriction(String),

    #[error("information matrix is singular (condition number {condition:e})")]
    SingularJ11 { condition: f64 },

    #[error("polyhedron is infeasible")]
    InfeasiblePolyhedron,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
