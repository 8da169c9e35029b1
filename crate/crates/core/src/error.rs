use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid cell: {0}")]
    InvalidCell(String),

    #[error("invalid marginal condition: {0}")]
    InvalidCondition(String),

    #[error("layouts differ")]
    LayoutMismatch,

    #[error("cell {cell} has sample count {sample} above population count {population}")]
    NotASubsample { cell: String, sample: u64, population: u64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("distribution parameter must be positive, got {0}")]
    NonPositiveParameter(f64),

    #[error("Stirling table holds rows up to {max_n}, requested {requested}")]
    TableTooSmall { max_n: usize, requested: usize },

    #[error("structural-zero probability mass {p0} is too close to one")]
    ProbabilityMassExceedsOne { p0: f64 },

    #[error("new-component mass underflowed to zero")]
    DegenerateMass,

    #[error("total table count is zero; concentration update skipped")]
    DegenerateTableCount,

    #[error("state invariant violated after iteration {iteration}: {message}")]
    InvariantViolated { iteration: u64, message: String },

    #[error("requested subsample of {requested} from a population of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    FormatVersion {
        what: &'static str,
        found: String,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
