use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while parsing a line-oriented text file.
#[derive(Debug, Clone, PartialEq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{width}x{height} is not divisible by downsample factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("non-positive depth {value} at index {index}")]
    NonPositiveDepth { index: usize, value: f64 },

    #[error("non-positive scale {value} at index {index}")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("{attribute} value {value} at gaussian {index} is outside the activation domain")]
    ActivationDomain {
        attribute: &'static str,
        index: usize,
        value: f64,
    },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),

    #[error("no valid ground-truth depth pixels")]
    NoValidPixels,

    #[error("feature extractor produced {got} layers, expected {expected}")]
    LayerCount { expected: usize, got: usize },

    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {}", join_issues(.issues))]
    Schema {
        path: PathBuf,
        issues: Vec<LineIssue>,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn join_issues(issues: &[LineIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// I/O and file-schema failures, as opposed to numerical ones.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Schema { .. } | Error::Image { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
