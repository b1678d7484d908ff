use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid bounds spec: {0}")]
    InvalidSpec(String),

    #[error("invalid reduced form: {0}")]
    InvalidReducedForm(String),

    #[error("covariance eigenvalue {value:e} outside [{min:e}, {max:e}]")]
    Eigenvalue { value: f64, min: f64, max: f64 },

    #[error("data schema: {0}")]
    DataSchema(String),

    #[error("stratum z={z} has {count} observations, minimum is {min}")]
    StratumMin { z: u8, count: usize, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("truncation window [{lower}, {upper}] carries no mass under N({mu}, {sigma2})")]
    Underflow {
        mu: f64,
        sigma2: f64,
        lower: f64,
        upper: f64,
    },

    #[error("no root for target {target} at t={t} in window [{lower}, {upper}] within {span} standard deviations")]
    Bracket {
        t: f64,
        target: f64,
        lower: f64,
        upper: f64,
        span: f64,
    },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below {tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("statistic has zero variance: {0}")]
    ZeroVariance(String),

    #[error("selection event does not hold at the estimate: {0}")]
    EventNotRealized(String),

    #[error("vertex enumeration needs {subsets} subsets, cap is {cap}; use an external enumerator")]
    LpEnumCap { subsets: u128, cap: u128 },

    #[error("{failed} of {reps} replications failed; first failure: {first}")]
    Replications { failed: usize, reps: usize, first: String },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Whether an error stems from bad input or from a numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "DIMENSION",
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::InvalidReducedForm(_) => "INVALID_REDUCED_FORM",
            Error::Eigenvalue { .. } => "SIGMA_EIGENVALUE",
            Error::DataSchema(_) => "DATA_SCHEMA",
            Error::StratumMin { .. } => "STRATUM_MIN",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Underflow { .. } => "TN_UNDERFLOW",
            Error::Bracket { .. } => "SOLVER_BRACKET",
            Error::NotPsd { .. } => "NOT_PSD",
            Error::ZeroVariance(_) => "ZERO_VARIANCE",
            Error::EventNotRealized(_) => "EVENT_NOT_REALIZED",
            Error::LpEnumCap { .. } => "LP_ENUM_CAP",
            Error::Replications { .. } => "REPLICATION_FAILURES",
            Error::Json(_) => "MALFORMED_JSON",
            Error::Csv(_) => "DATA_SCHEMA",
            Error::Io(_) => "IO",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Underflow { .. }
            | Error::Bracket { .. }
            | Error::NotPsd { .. }
            | Error::ZeroVariance(_)
            | Error::EventNotRealized(_)
            | Error::LpEnumCap { .. }
            | Error::Replications { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }
}
