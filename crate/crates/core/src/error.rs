use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("law violation in {0}")]
    LawViolation(LawDiagnostic),

    #[error("fit failure: {reason}")]
    FitFailure {
        reason: String,
        residual_rms: Option<f64>,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn fit(reason: impl Into<String>, residual_rms: Option<f64>) -> Self {
        Error::FitFailure {
            reason: reason.into(),
            residual_rms,
        }
    }
}

/// The sums that made a closed-form law undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct LawDiagnostic {
    pub law: &'static str,
    /// Σ_i H_ii
    pub trace: f64,
    /// Σ_{i≠j} (μ_i μ_j / σ_i σ_j) H_ij, when the law uses it.
    pub cross_sum: Option<f64>,
    /// The denominator that failed the positivity check.
    pub denominator: f64,
}

impl fmt::Display for LawDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: non-positive denominator {:e} (trace = {:e}",
            self.law, self.denominator, self.trace
        )?;
        if let Some(cross) = self.cross_sum {
            write!(f, ", cross sum = {cross:e}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
