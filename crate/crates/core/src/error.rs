use thiserror::Error;

/// Errors raised by the kconv numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: dt {left_dt} / {left_n} points vs dt {right_dt} / {right_n} points")]
    GridMismatch {
        left_dt: f64,
        left_n: usize,
        right_dt: f64,
        right_n: usize,
    },

    #[error("horizon truncation unsound: {0}")]
    HorizonTruncation(String),

    #[error("insufficient horizon: need t = {needed}, grid ends at {available}")]
    InsufficientHorizon { needed: f64, available: f64 },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("unknown identity id `{0}`")]
    UnknownIdentity(String),

    #[error("kernel `{0}` has no time-domain representation")]
    NoTimeDomain(String),

    #[error("first-kind ill-posed for this kernel: {0}")]
    IllPosed(String),

    #[error("no constructive witness: {0}")]
    NoWitness(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("mismatched generators")]
    MismatchedGenerators,

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
