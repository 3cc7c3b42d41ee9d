use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("adapter has no row for batch '{0}'")]
    MissingAdapterRow(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("client '{0}' has no training cells")]
    EmptyClient(String),

    #[error("non-finite loss in round {round} for client '{client}'")]
    NonFiniteLoss { round: usize, client: String },

    #[error("{metric}: {source}")]
    Metric {
        metric: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn in_metric(self, metric: &'static str) -> Error {
        Error::Metric {
            metric,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
