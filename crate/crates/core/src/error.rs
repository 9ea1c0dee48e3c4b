use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty operator list")]
    Empty,

    #[error("measurement is not complete: |sum M_s^dag M_s - 1| = {residual:e}")]
    IncompletePovm { residual: f64 },

    #[error("duplicate outcome value {0}")]
    DuplicateOutcome(f64),

    #[error("unknown outcome value {0}")]
    UnknownOutcome(f64),

    #[error(
        "map is not CPTP: trace-preservation residual {trace_residual:e}, \
         positivity residual {positivity_residual:e}"
    )]
    NotCptp {
        trace_residual: f64,
        positivity_residual: f64,
    },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("channel has no unique fixed point (non-ergodic)")]
    NoUniqueFixedPoint,

    #[error("asymptotic variance requires mixing; channel is ergodic but not mixing")]
    NotMixing,

    #[error("centering state is not stationary: |E(rho) - rho| = {residual:e}")]
    NonStationaryCentering { residual: f64 },

    #[error("record too short: N = {n} but lag L = {l} requires N >= L + 1")]
    RecordTooShort { n: usize, l: usize },

    #[error("enumeration cap exceeded: {count} sequences > cap {cap}")]
    CapExceeded { count: u128, cap: u64 },

    #[error("negative step probability {0:e}; instrument is not completely positive")]
    NegativeProbability(f64),

    #[error("all step probabilities vanish; conditional state is invalid")]
    VanishingProbability,

    #[error("covariance matrix is degenerate")]
    DegenerateCovariance,

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Process exit code for the CLI: 2 parse/validation, 3 mathematical
    /// precondition, 4 resource cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoUniqueFixedPoint
            | Error::NotMixing
            | Error::NonStationaryCentering { .. }
            | Error::DegenerateCovariance
            | Error::VanishingProbability
            | Error::NegativeProbability(_)
            | Error::Numerical(_) => 3,
            Error::CapExceeded { .. } => 4,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
