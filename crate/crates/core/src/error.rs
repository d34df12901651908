use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("codebook construction failed: best cardinality {best} after {attempts} attempts, needed {target}")]
    Construction {
        best: usize,
        target: usize,
        attempts: usize,
    },

    #[error("infeasible target scale {requested}: at most {max_achievable} is reachable within the l1 budget")]
    Infeasible { requested: f64, max_achievable: f64 },

    #[error("underdetermined fit: need at least 2 distinct sample sizes, got {distinct}")]
    Underdetermined { distinct: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("series contains no rows")]
    EmptySeries,

    #[error("training failed for cell (n={n}, seed_index={seed_index}): {source}")]
    Cell {
        n: usize,
        seed_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
