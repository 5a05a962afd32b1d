use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    #[error("invalid argument to {op}: {details}")]
    InvalidArg { op: &'static str, details: String },

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("training aborted at step {step}: {details}")]
    Training { step: u64, details: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("data format error in {path}: {details}")]
    DataFormat { path: PathBuf, details: String },

    #[error("missing artifact: {what}; run `{stage}` first")]
    MissingArtifact { what: String, stage: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {details}")]
    Checkpoint { path: PathBuf, details: String },
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidArg {
            op,
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, details: impl Into<String>) -> Self {
        Error::DataFormat {
            path: path.into(),
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
