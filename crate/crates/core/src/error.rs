use std::path::PathBuf;

use thiserror::Error;

use crate::numkit::NumError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),

    #[error("{what} width mismatch: expected {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("discrete action {action} out of range for {n} actions")]
    ActionOutOfRange { action: usize, n: usize },

    #[error("distribution kinds do not match")]
    KindMismatch,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown environment {0:?}")]
    UnknownEnv(String),

    #[error("step called after the episode ended; call reset first")]
    StepAfterDone,

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate Jacobian: every singular value is at most {threshold:e}")]
    DegenerateJacobian { threshold: f64 },

    #[error("level sets overlap on seed {0}")]
    OverlappingLevels(u64),

    #[error("level set {0:?} is empty")]
    EmptyLevelSet(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("variant {variant:?} overrides fixed field {field:?}")]
    FixedField { variant: String, field: String },

    #[error("update {update}: {source}")]
    AtUpdate {
        update: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
