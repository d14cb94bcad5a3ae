use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("non-finite value produced during {0}")]
    NonFinite(String),

    /// The dense block of the sensing matrix does not have full column rank,
    /// so the dynamics cannot be separated from the inputs.
    #[error("not identifiable: {detail} (rank {rank} < {required})")]
    Identifiability {
        rank: usize,
        required: usize,
        detail: String,
    },

    #[error("enumeration budget exceeded: {needed} evaluations needed, budget is {budget}")]
    Budget { needed: u128, budget: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
