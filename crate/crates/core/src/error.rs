use thiserror::Error;

use crate::expr::ExprError;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("matrix is singular to working precision (pivot {pivot:.3e} at column {column}, threshold {threshold:.3e})")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("odd step count {0}; Simpson's rule needs an even number of panels")]
    OddSteps(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("partition is not regular: I - G stays singular after {refinements} refinements")]
    NotRegular { refinements: usize },

    #[error("problem is not well-posed on this partition: Q* is singular")]
    NotWellPosed,

    #[error("contraction test failed: q = {q:.6e} >= 1 (C_k = {c_k:.6e}, measured epsilon = {epsilon:.6e}); raise the approximation degree")]
    ContractionFailed { q: f64, c_k: f64, epsilon: f64 },

    #[error("iteration did not converge in {iterations} steps (last delta {delta:.6e})")]
    NoConvergence { iterations: usize, delta: f64 },

    #[error("no unique solution: closed-form determinant vanishes")]
    NoUniqueSolution,
}

impl Error {
    /// Machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Expr(ExprError::Syntax { .. }) => "PARSE_ERROR",
            Error::Expr(ExprError::Domain { .. }) => "DOMAIN_ERROR",
            Error::Singular { .. } => "SINGULAR",
            Error::Shape(_) => "SHAPE_MISMATCH",
            Error::NonFinite { .. } => "NON_FINITE",
            Error::OddSteps(_) => "ODD_STEPS",
            Error::InvalidMesh(_) => "INVALID_MESH",
            Error::InvalidProblem(_) => "INVALID_PROBLEM",
            Error::NotRegular { .. } => "NOT_REGULAR",
            Error::NotWellPosed => "NOT_WELL_POSED",
            Error::ContractionFailed { .. } => "CONTRACTION_FAILED",
            Error::NoConvergence { .. } => "NO_CONVERGENCE",
            Error::NoUniqueSolution => "NO_UNIQUE_SOLUTION",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
