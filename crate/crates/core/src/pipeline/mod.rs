//! Staged orchestration. Each stage reads its inputs from the work dir,
//! writes its artifacts there and records a config hash in the manifest so
//! later stages can refuse stale inputs.
//!
//! Work-dir layout: `data/` (synthetic inputs), `graph/`, `walks/`,
//! `embeddings/`, `features/`, `models/`, `reports/`, `manifest.json`.

mod config;
mod manifest;
mod stages;

pub use config::{Paths, PipelineConfig};
pub use manifest::{Manifest, Stage, StageRecord, MANIFEST_FILE};
pub use stages::{Graph, Pipeline, FEEDBACK_NAME};

use crate::error::Error;

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("{0}")]
    Config(String),

    #[error("missing {what}; run `kgrec {run}` first")]
    Missing { what: String, run: &'static str },

    #[error("{stage} output was produced under a different config; rerun `kgrec {stage}` or pass --force")]
    Stale { stage: &'static str },

    #[error(transparent)]
    Runtime(Error),
}

impl StageError {
    /// 1 usage or config error, 2 missing or stale artifact, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 1,
            StageError::Missing { .. } | StageError::Stale { .. } => 2,
            StageError::Runtime(_) => 3,
        }
    }
}

impl From<Error> for StageError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } => StageError::Config(e.to_string()),
            other => StageError::Runtime(other),
        }
    }
}

impl From<serde_json::Error> for StageError {
    fn from(e: serde_json::Error) -> Self {
        StageError::Runtime(Error::Json(e))
    }
}
