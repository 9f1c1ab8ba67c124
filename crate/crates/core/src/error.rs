use thiserror::Error;

use crate::ClientId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite values during {context}")]
    Numerical { context: String },

    #[error("integrity failure: expected digest {expected}, stored bytes hash to {actual}")]
    Integrity { expected: String, actual: String },

    #[error("no blob stored under digest {0}")]
    MissingBlob(String),

    #[error("unknown client {0}")]
    UnknownClient(ClientId),

    #[error("degenerate aggregation: every queued model has zero weight")]
    DegenerateAggregation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Numerical { .. } | Error::DegenerateAggregation => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            Error::Integrity { .. } | Error::MissingBlob(_) => 5,
            Error::Shape(_) | Error::UnknownClient(_) => 1,
        }
    }

    /// Short label printed alongside the exit code.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numerical",
            4 => "io",
            5 => "integrity",
            _ => "internal",
        }
    }
}
