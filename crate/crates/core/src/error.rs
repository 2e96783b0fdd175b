use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode {mode} out of range for order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid rank: {0}")]
    InvalidRank(String),
    #[error("mode {0} repeated in multi-mode product")]
    RepeatedMode(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("complement of dimension {requested} requested but only {available} available")]
    ComplementTooLarge { requested: usize, available: usize },
    #[error("base point is zero")]
    ZeroBasePoint,
    #[error("direction vanishes on the sample set")]
    ZeroDirection,
    #[error("normal direction is zero; rank increase is ineffective")]
    RankIncreaseIneffective,
    #[error("invalid sampling: {0}")]
    InvalidSampling(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
