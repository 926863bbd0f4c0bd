//! Error type shared by every stage of the toolkit.

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: a precondition or configuration constraint was violated.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("operation not supported by backend `{backend}`: {op}")]
    Unsupported { backend: String, op: &'static str },

    /// The backend process or service could not answer.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// The backend answered with `ok: false`.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver did not converge after {iterations} iterations (max violation {violation:e})")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("exhausted after {attempts} attempts: {what}")]
    Exhausted { attempts: usize, what: String },

    #[error("format error: {0}")]
    Format(String),

    /// A pipeline stage failed; carries the stage name and seed for reruns.
    #[error("stage `{stage}` failed (seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn in_stage(self, stage: &'static str, seed: u64) -> Self {
        Error::Stage {
            stage,
            seed,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command line tool: 2 validation, 3 backend, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroNorm
            | Error::Format(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Unsupported { .. } | Error::BackendUnavailable(_) | Error::Backend(_) => 3,
            Error::Stage { source, .. } => match source.exit_code() {
                3 => 3,
                _ => 4,
            },
            Error::Numerical(_)
            | Error::NoConvergence { .. }
            | Error::Exhausted { .. }
            | Error::Io(_) => 4,
        }
    }
}
