use thiserror::Error;

/// Errors raised by the HDSA library.
#[derive(Debug, Error)]
pub enum HdsaError {
    #[error("mesh needs at least 2 cells per side, got {0}")]
    InvalidResolution(usize),

    #[error("point ({0}, {1}) lies outside the unit square")]
    PointOutsideDomain(f64, f64),

    #[error("unknown boundary side tag `{0}`")]
    InvalidSide(String),

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("line search failed after {0} halvings")]
    LineSearchFailed(usize),

    #[error("inverse Hessian solve failed after {iterations} CG iterations")]
    HessianSolve { iterations: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("cannot normalize: {0} is zero")]
    ZeroNormalizer(&'static str),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("scalar MAP search failed: {0}")]
    ScalarMap(String),

    #[error("incremental state was computed for a different direction")]
    StaleIncrementalState,

    #[error("all {0} samples failed")]
    AllSamplesFailed(usize),

    #[error("empty sample set")]
    NoSamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HdsaError>;
