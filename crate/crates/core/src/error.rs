use std::path::PathBuf;

use thiserror::Error;

use crate::did::CellIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{column}` in {path}")]
    Schema { column: String, path: String },

    #[error("parse error in {path} at row {row}, column `{column}`: cannot read `{value}`")]
    Parse {
        path: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("year {year} is outside the wage index domain")]
    Domain { year: i32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cell (g={}, t={}) is not estimable: {reason}", .cell.g, .cell.t)]
    Inestimable { cell: CellIndex, reason: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("perfect separation in propensity model on covariate `{covariate}`")]
    Separation { covariate: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Domain { .. }
            | Error::Io { .. }
            | Error::Csv(_) => 2,
            Error::Inestimable { .. } | Error::Estimation(_) | Error::Separation { .. } => 3,
        }
    }
}
