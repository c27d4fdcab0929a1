use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular or has non-positive determinant")]
    SingularMatrix,

    #[error("rank-one edit would make the determinant non-positive (factor {factor})")]
    NonPositiveDeterminant { factor: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("design matrix is rank deficient: rank {rank} < {columns} columns")]
    RankDeficient { rank: usize, columns: usize },

    #[error("cached spatial system does not match (rho, W): {0}")]
    InconsistentState(String),

    #[error("expected neighbour count {m} must lie in (0, {max})")]
    InvalidAnchor { m: f64, max: usize },

    #[error("{0} is outside the support of its prior")]
    OutOfSupport(&'static str),

    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("every grid point of the rho conditional has zero density")]
    DegeneratePosterior,

    #[error(
        "{failed} of {proposed} determinant proposals failed within one sweep; \
         the model is likely misspecified (e.g. unstandardized W with large rho)"
    )]
    PathologicalRejection { failed: usize, proposed: usize },

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("need at least {needed} draws, got {found}")]
    TooFewDraws { needed: usize, found: usize },

    #[error("chain holds no retained draws")]
    EmptyChain,

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("missing lag: {0}")]
    MissingLag(String),

    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
