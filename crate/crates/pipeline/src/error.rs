use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Clean,
    Select,
    Train,
    Optimize,
    Recipes,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Clean, Stage::Select, Stage::Train, Stage::Optimize, Stage::Recipes];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Optimize => "optimize",
            Stage::Recipes => "recipes",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    /// The configuration or a request is invalid; nothing was run.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: procopt_core::Error,
    },

    /// The stage failed for a reason outside the engine (for example a
    /// screening gate or a missing artifact).
    #[error("stage `{stage}` failed: {message}")]
    StageMessage { stage: Stage, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),
}

impl PipelineError {
    pub fn validation(message: impl Into<String>) -> Self {
        PipelineError::Validation(message.into())
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn stage(stage: Stage) -> impl FnOnce(procopt_core::Error) -> Self {
        move |source| PipelineError::Stage { stage, source }
    }

    /// Process exit code: 1 for validation errors, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Validation(_) => 1,
            _ => 2,
        }
    }

    pub fn failed_stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } | PipelineError::StageMessage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
