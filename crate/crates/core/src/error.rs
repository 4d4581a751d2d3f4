use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration has {got} coordinates, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for N = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("near-critical point: gradient norm {grad_norm:e} below floor")]
    NearCritical { grad_norm: f64 },

    #[error("finite-difference step underflow (h = {step:e})")]
    StepUnderflow { step: f64 },

    #[error("invalid value for `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("could not place a starting point on the shell |V - {target}| <= {epsilon} after {attempts} attempts")]
    ShellInit {
        target: f64,
        epsilon: f64,
        attempts: usize,
    },

    #[error("grid range too small: {0}")]
    RangeTooSmall(String),

    #[error("sublevel set is empty at v = {v}")]
    EmptySublevel { v: f64 },

    #[error("degenerate critical point at v_c = {v_c} inside the requested range")]
    DegenerateCritical { v_c: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, constraint: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}
