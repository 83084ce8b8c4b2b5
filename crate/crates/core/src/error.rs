use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch} (batch {batch})")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{field} = {value} lies outside the domain [{lo}, {hi}]")]
    Domain {
        field: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("solver instability (simulated failure)")]
    Instability,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("series is constant; autocorrelation undefined")]
    ConstantSeries,

    #[error("credible interval is degenerate (zero width at {0})")]
    DegenerateInterval(f64),

    #[error("model file version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupted model file: {0}")]
    Corrupt(String),

    #[error("malformed {file}: {reason}")]
    Format { file: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn format(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            reason: reason.into(),
        }
    }
}
