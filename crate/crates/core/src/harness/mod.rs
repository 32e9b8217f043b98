//! Experiment orchestration: file formats, metrics, the bundled IEEE 39-bus
//! tree case and the end-to-end pipeline.

mod ieee39;
pub mod io;
mod metrics;
mod pipeline;

use std::path::PathBuf;

use thiserror::Error;

pub use ieee39::{ieee39_case_file, ieee39_tree_case, CaseFile};
pub use metrics::{compare_topologies, TopologyMetrics};
pub use pipeline::{
    reconstruct_from_field, run_pipeline, ExperimentConfig, FieldReconstruction, ModelSource,
    OutputConfig, PruneConfig, PruneMode, ReconstructOptions, ReconstructionReport, ScoreChoice,
    ScoreSummary, SelectionSummary, SimulationConfig, WienerConfig,
};

/// Process exit code for errors raised while running a stage.
pub const EXIT_STAGE: i32 = 1;
/// Process exit code for unusable configuration or input files.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("node sets differ: only in estimate {only_estimated:?}, only in truth {only_truth:?}")]
    NodeSetMismatch {
        only_estimated: Vec<String>,
        only_truth: Vec<String>,
    },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl HarnessError {
    pub fn stage<E: std::error::Error + Send + Sync + 'static>(stage: &'static str, e: E) -> Self {
        Self::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Parse { .. } | Self::Schema { .. } => {
                EXIT_CONFIG
            }
            Self::NodeSetMismatch { .. } | Self::Stage { .. } => EXIT_STAGE,
        }
    }

    /// Name of the failing stage, if any.
    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            Self::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The underlying stage error, for downcasting.
    pub fn stage_source(&self) -> Option<&(dyn std::error::Error + Send + Sync + 'static)> {
        match self {
            Self::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
