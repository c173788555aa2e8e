use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),

    #[error("singular design matrix (rank {rank} of {dim})")]
    SingularDesign { rank: usize, dim: usize },

    #[error("optimal arm is not unique")]
    NonUniqueOptimum,

    #[error("oracle query is infeasible: every coordinate is -inf")]
    InfeasibleQuery,

    #[error("coordinate {coord} is not covered by any arm")]
    Coverage { coord: usize },

    #[error("design problem infeasible (best constraint value {best})")]
    Infeasible { best: f64 },

    #[error("arm class is not enumerable: {0}")]
    NotEnumerable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), msg: err.to_string() }
    }
}
