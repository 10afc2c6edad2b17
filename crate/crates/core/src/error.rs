use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DnfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DnfError {
    #[error("mesh `{mesh}` is not watertight: {open_edges} boundary or non-manifold edges")]
    NotWatertight { mesh: String, open_edges: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("no sign change of the field on the {resolution}^3 grid, the zero level set is empty")]
    EmptyMesh { resolution: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("prerequisite missing: run stage `{stage}` first ({detail})")]
    Prerequisite { stage: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("bad container: {0}")]
    Format(String),

    #[error("run directory {0} is locked by another stage")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

impl DnfError {
    pub fn shape(msg: impl Into<String>) -> Self {
        DnfError::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        DnfError::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        DnfError::Numerical(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            DnfError::Config(_) => 2,
            DnfError::Prerequisite { .. } | DnfError::MissingFiles(_) => 3,
            DnfError::Numerical(_) => 4,
            _ => 1,
        }
    }
}
