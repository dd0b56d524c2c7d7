use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("twist logarithm undefined: rotation angle {angle:.6} rad is within 1e-3 of pi")]
    LogSingularity { angle: f64 },

    #[error("no motion: transform is the identity within tolerance")]
    NoMotion,

    #[error("no motion detected: no source-state foreground pixel is background in any target view away from its silhouette")]
    NoMotionDetected,

    #[error("part initialization failed: {0}")]
    Initialization(String),

    #[error("non-finite loss at step {step} of {phase}")]
    NonFinite { phase: &'static str, step: usize },

    #[error("static fit diverged: the smoothed loss grew over the last {window} of {steps} steps")]
    Diverged { steps: usize, window: usize },

    #[error("{path}: {msg} (at byte {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Format { .. } | Error::UnsupportedVersion { .. } | Error::Json { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
