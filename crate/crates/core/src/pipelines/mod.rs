//! The three generation tasks and the local math around them.

pub mod backend;
pub mod imaging;
pub mod mesh;
pub mod mock;
pub mod muse;
pub mod pose;
pub mod schedule;
pub mod tasks;

pub use backend::{
    Artifact, BackendError, BackendRole, BackendSet, ModelBackend, StageInputs, StageOutput,
};
pub use mock::{MockBackend, MockConfig};
pub use muse::{default_muses, MuseMedia, MuseProfile};
pub use pose::{normalize_proportions, pose_validity, LimbRatioTable, ValidityConfig};
pub use schedule::{control_schedule, ControlSchedule, StepRange};
pub use tasks::{
    run_task, run_task1, run_task2, run_task3, AssetKind, GeneratedAsset, PipelineConfig,
    PipelineRun, StageGraph, StageRecord, TaskContext,
};

use crate::orchestrator::ErrorClass;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage} failed ({class:?}): {message}")]
    BackendFailure {
        stage: BackendRole,
        class: ErrorClass,
        message: String,
    },
    #[error("no backend bound for {0}")]
    MissingBackend(BackendRole),
    #[error("muse {muse_id} has no style reference")]
    MissingStyleRef { muse_id: u8 },
    #[error("frieze {frieze:?} does not fit background {background:?} with margin {margin}")]
    FriezeTooLarge {
        frieze: (u32, u32),
        background: (u32, u32),
        margin: u32,
    },
    #[error("pose has a zero-length torso or non-finite keypoints")]
    DegeneratePose,
    #[error("control schedule needs at least 4 steps, got {0}")]
    TooFewSteps(u32),
    #[error("cannot load {reference}: {message}")]
    AssetLoad { reference: String, message: String },
}

impl PipelineError {
    /// Only backend failures can be transient; everything else is a
    /// configuration or input problem that a retry will not fix.
    pub fn error_class(&self) -> ErrorClass {
        match self {
            PipelineError::BackendFailure { class, .. } => *class,
            _ => ErrorClass::Permanent,
        }
    }
}
