use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the generate / train / separate / evaluate chain.
#[derive(Debug, Error)]
pub enum TclError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{matrix} is rank deficient after {attempts} attempt(s): rank {rank} < {required}")]
    RankDeficient {
        matrix: &'static str,
        rank: usize,
        required: usize,
        attempts: usize,
    },

    #[error("no mixing layer met condition bound {bound:e} after {attempts} attempts (best {best:e})")]
    IllConditioned {
        bound: f64,
        best: f64,
        attempts: usize,
    },

    #[error("singular mixing layer {0}")]
    SingularLayer(usize),

    #[error("covariance is rank deficient: eigenvalue(s) {eigenvalues:?} below floor {floor:e}")]
    DeficientCovariance { eigenvalues: Vec<f64>, floor: f64 },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("label {label} out of range for {segments} segments")]
    LabelOutOfRange { label: usize, segments: usize },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<TclError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl TclError {
    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        TclError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        TclError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TclError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TclError>;
