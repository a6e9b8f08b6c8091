//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type SadResult<T> = Result<T, SadError>;

#[derive(Debug, Error)]
pub enum SadError {
    /// Invalid configuration value or combination.
    #[error("config: {0}")]
    Config(String),

    /// An argument outside its mathematical domain (negative fog density, widened FoV, ...).
    #[error("domain: {0}")]
    Domain(String),

    /// Tensor or label shape disagreement.
    #[error("shape: {0}")]
    Shape(String),

    /// Wiring contract violation (e.g. a spf-tagged feature map fed to the task head).
    #[error("contract: {0}")]
    Contract(String),

    /// Malformed dataset content (bad class index, missing file listed in a manifest).
    #[error("data: {0}")]
    Data(String),

    /// Training diverged; carries the ids of the batch that produced a non-finite loss.
    #[error("non-finite loss at step {step}; source batch {src_ids:?}, target batch {tgt_ids:?}")]
    NonFiniteLoss {
        step: u64,
        src_ids: Vec<usize>,
        tgt_ids: Vec<usize>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl SadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SadError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SadError::Json {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        SadError::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: config problems map to 3, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            SadError::Config(_) => 3,
            _ => 1,
        }
    }
}
