use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate kernel: point {index} has zero kernel row sum")]
    DegenerateKernel { index: usize },

    #[error("point lies outside the data support (kernel density {density:e})")]
    OutOfSupport { density: f64 },

    #[error("basis is rank deficient: {0}")]
    BasisDegenerate(String),

    #[error("eigensolver failed to converge on a {size}x{size} matrix")]
    EigenNoConvergence { size: usize },

    #[error("non-finite state at step {step} ({context})")]
    Divergence { step: usize, context: &'static str },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateKernel { .. }
                | Error::OutOfSupport { .. }
                | Error::BasisDegenerate(_)
                | Error::EigenNoConvergence { .. }
                | Error::Divergence { .. }
                | Error::Numeric(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
