//! Batch front end: load a problem file, solve or check it, and write a
//! solution table and a JSON diagnostics report.

pub mod config;
pub mod output;
pub mod report;
pub mod run;

use mpfide::model::Finding;

pub use output::Format;
pub use run::{execute, run_check, run_solve, Command, Outcome, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{message}")]
    Parse {
        field: Option<String>,
        offset: Option<usize>,
        message: String,
    },

    #[error("problem failed validation: {}", .0.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Finding>),

    #[error(transparent)]
    Solve(#[from] mpfide::Error),

    #[error("Q* could not be certified: ||Q*^-1|| * epsilon_h = {product:.6e} is not below 1")]
    NotCertified { product: f64 },

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        CliError::Parse {
            field: None,
            offset: None,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "PARSE_ERROR",
            CliError::Invalid(_) => "INVALID_PROBLEM",
            CliError::Solve(e) => e.code(),
            CliError::NotCertified { .. } => "NOT_CERTIFIED",
            CliError::Io(_) => "IO_ERROR",
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "PARSE_ERROR" | "INVALID_PROBLEM" => 2,
            "NOT_REGULAR" => 3,
            "NOT_WELL_POSED" | "NOT_CERTIFIED" => 4,
            "CONTRACTION_FAILED" => 5,
            "NO_CONVERGENCE" => 6,
            _ => 1,
        }
    }
}
