use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution parameter fell outside its support.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// A matrix that must be symmetric positive definite failed to factorize.
    #[error("matrix is not positive definite ({context}); diagonal range [{min_diag:.3e}, {max_diag:.3e}]")]
    Singular {
        context: String,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Operation requested for the wrong observation layer.
    #[error("mode error: {0}")]
    Mode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// Posterior document could not be decoded.
    #[error("document error at `{path}`: {msg}")]
    Document { path: String, msg: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn document(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Document {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
