use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("no masked frames: masked-prediction loss has no support")]
    EmptyMask,

    #[error("infeasible alignment: label of length {label_len} needs at least {required} frames, got {frames}")]
    InfeasibleAlignment {
        label_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("WER undefined for an empty reference")]
    EmptyReference,

    #[error("sample size error: {0}")]
    SampleSize(String),

    #[error("paired differences have zero variance and nonzero mean: t is infinite")]
    InfiniteT,

    #[error("singular covariance: {0} (use a positive regularization epsilon)")]
    Singular(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("anchor error: {0}")]
    Anchor(String),

    #[error(
        "predicted out-of-memory: {what} needs an estimated {estimated_bytes} bytes, budget is {budget_bytes} bytes"
    )]
    PredictedOom {
        what: String,
        estimated_bytes: u64,
        budget_bytes: u64,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }
}
