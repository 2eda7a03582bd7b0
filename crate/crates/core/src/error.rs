use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BvssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BvssError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range (valid: {lo}..{hi})")]
    Bounds { index: usize, lo: usize, hi: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank deficiency at column {index}")]
    Rank { index: usize },

    #[error("matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampler failed at iteration {iteration}: {source}")]
    Sampler {
        iteration: usize,
        #[source]
        source: Box<BvssError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl BvssError {
    /// Stable machine-readable code, printed by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            BvssError::Parse { .. } | BvssError::Ragged { .. } | BvssError::Csv(_) => "E_PARSE",
            BvssError::Bounds { .. } => "E_BOUNDS",
            BvssError::Shape(_) => "E_SHAPE",
            BvssError::Rank { .. } => "E_RANK",
            BvssError::NotPositiveDefinite { .. } => "E_NOT_PD",
            BvssError::Domain(_) => "E_DOMAIN",
            BvssError::Config(_) => "E_CONFIG",
            BvssError::Sampler { .. } => "E_SAMPLER",
            BvssError::Io { .. } => "E_IO",
            BvssError::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BvssError::Io {
            path: path.into(),
            source,
        }
    }
}
