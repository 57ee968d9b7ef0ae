use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("assignment is incomplete: variable {0} is unassigned")]
    IncompleteAssignment(usize),

    #[error("too many free variables for enumeration ({free} > {limit})")]
    TooManyFreeVariables { free: usize, limit: usize },

    #[error("induced width {width} exceeds the limit of {limit}")]
    WidthLimit { width: usize, limit: usize },

    #[error("invalid elimination order: {0}")]
    InvalidOrder(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss on instance {instance}")]
    NonFiniteLoss { instance: usize },

    #[error("no supervision available for instance")]
    NoSupervision,

    #[error("solver found no feasible solution")]
    NoSolution,

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(position: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            position,
            message: message.into(),
        }
    }
}
