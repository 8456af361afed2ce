use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch composition error: {0}")]
    BatchComposition(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("speller protocol error: {0}")]
    Protocol(String),

    #[error("singular covariance matrix: {0}")]
    SingularCovariance(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
