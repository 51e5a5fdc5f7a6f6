//! Error taxonomy shared by the library and the CLI.
//!
//! The CLI maps these onto process exit codes: input problems (parse,
//! validation, domain, config, I/O) exit 2, infeasible models exit 3, and
//! solver/fit failures exit 4.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file did not match its expected schema.
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Structurally well-formed input violating a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An evaluation outside an operation's stated domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Configuration that cannot drive the pipeline (bad grids, sizing, paths).
    #[error("configuration error: {0}")]
    Config(String),

    /// Least-squares design too degenerate to fit.
    #[error("ill-posed fit: {0}")]
    IllPosedFit(String),

    /// Iterative fit ran out of iterations; carries residual diagnostics.
    #[error("fit did not converge: {0}")]
    FitDiverged(String),

    /// A model with no feasible point, with whatever diagnosis is available.
    #[error("infeasible: {0}")]
    Infeasible(InfeasibilityReport),

    /// The conic backend stopped without a usable answer.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Diagnosis attached to an infeasible solve.
#[derive(Debug, Clone, Default)]
pub struct InfeasibilityReport {
    /// Human-readable description of the binding budget.
    pub summary: String,
    /// Extra battery energy [J] that would restore feasibility, when the
    /// elastic re-solve could determine it.
    pub missing_energy_j: Option<f64>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.summary)?;
        if let Some(e) = self.missing_energy_j {
            write!(f, " (≈{e:.0} J short)")?;
        }
        Ok(())
    }
}

impl Error {
    pub fn infeasible(summary: impl Into<String>) -> Self {
        Error::Infeasible(InfeasibilityReport {
            summary: summary.into(),
            missing_energy_j: None,
        })
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Infeasible(_) => 3,
            Error::IllPosedFit(_) | Error::FitDiverged(_) | Error::SolverFailure(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
