use thiserror::Error;

use crate::mask::MaskError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mask(#[from] MaskError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initialization mask is empty")]
    EmptyInitMask,

    #[error("output mask is empty; gate anchor detection on target presence")]
    EmptyOutput,

    #[error("frame {frame}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionDrift {
        frame: u64,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("predictor failed at frame {frame}: {message}")]
    Predictor { frame: u64, message: String },

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad input data rather than a bug.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::File { source, .. } | Error::AtFrame { source, .. } => source.is_data_error(),
            Error::Protocol(_) | Error::Predictor { .. } => false,
            _ => true,
        }
    }

    pub fn in_file(self, path: impl Into<String>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
