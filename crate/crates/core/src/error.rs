use thiserror::Error;

/// Errors raised by the filtering, sampling and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    /// Cholesky failed; `pivot` is the zero-based index of the first non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e}){context}")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        context: String,
    },

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("identifiability error: {0}")]
    Identifiability(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("infeasible truncation region: log-probability bound {log_prob:.3} below threshold")]
    Infeasible { log_prob: f64 },

    #[error("particle degeneracy at t={t}: all importance weights are zero")]
    Degenerate { t: usize },

    #[error("approximation failed at t={t}: {reason}")]
    Approximation { t: usize, reason: String },

    #[error("unknown functional `{0}`")]
    UnknownFunctional(String),

    #[error("configuration error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn not_pd(pivot: usize, value: f64) -> Self {
        Error::NotPositiveDefinite {
            pivot,
            value,
            context: String::new(),
        }
    }

    /// Attach a human-readable location (e.g. "V_3") to a positive-definiteness failure.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::NotPositiveDefinite { pivot, value, .. } => Error::NotPositiveDefinite {
                pivot,
                value,
                context: format!(" in {}", ctx.into()),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
