//! One show end to end: intake, generation, review, choreography and the
//! published manifest, driven either by a wall clock or by a recorded
//! script in virtual time.

mod engine;
mod replay;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::{IngestError, DEFAULT_CAPACITY, DEFAULT_MAX_PIXELS, DEFAULT_MUSE_GROUPS};
use crate::moderation::{ModerationError, TimeoutPolicy};
use crate::oracle::{OracleError, ScoreConfig};
use crate::orchestrator::{OrchestratorConfig, OrchestratorError, TaskType};
use crate::pipelines::{default_muses, MockConfig, MuseProfile, PipelineConfig, PipelineError};
use crate::sink::SinkError;

pub use engine::{AssetRecord, JobInfo, JobOutcome, Show, ShowOptions, WorkOrder};
pub use replay::{
    replay, FaultSpec, RecordedEvent, ReplayOutcome, ShowRecording, SketchSource, TimedEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShowConfig {
    pub show_id: String,
    pub muse_groups: usize,
    pub capacity: usize,
    pub max_pixels: u64,
    pub orchestrator: OrchestratorConfig,
    pub pipeline: PipelineConfig,
    pub moderation: TimeoutPolicy,
    pub mock: MockConfig,
    /// Empty means the seven built-in muses.
    pub muses: Vec<MuseProfile>,
    /// Move library JSON; the built-in twelve moves when unset.
    pub move_library: Option<PathBuf>,
    pub score: ScoreConfig,
    /// How many published assets feed a cue's move selection and poem.
    pub cue_sources: usize,
}

impl Default for ShowConfig {
    fn default() -> Self {
        Self {
            show_id: "show".into(),
            muse_groups: DEFAULT_MUSE_GROUPS,
            capacity: DEFAULT_CAPACITY,
            max_pixels: DEFAULT_MAX_PIXELS,
            orchestrator: OrchestratorConfig::default(),
            pipeline: PipelineConfig::default(),
            moderation: TimeoutPolicy::default(),
            mock: MockConfig::default(),
            muses: Vec::new(),
            move_library: None,
            score: ScoreConfig::default(),
            cue_sources: 5,
        }
    }
}

impl ShowConfig {
    pub fn load(path: &Path) -> Result<Self, ShowError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ShowError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ShowConfig = serde_json::from_str(&text)
            .map_err(|e| ShowError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn muse_profiles(&self) -> Vec<MuseProfile> {
        if self.muses.is_empty() {
            default_muses()
        } else {
            self.muses.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ShowError> {
        let bad = |m: String| Err(ShowError::Config(m));
        if self.show_id.is_empty()
            || !self
                .show_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "show_id {:?} must be non-empty [A-Za-z0-9_-]",
                self.show_id
            ));
        }
        if self.muse_groups == 0 || self.capacity == 0 {
            return bad("muse_groups and capacity must be positive".into());
        }
        for task in TaskType::ALL {
            if self.orchestrator.pools.get(task) == 0 {
                return bad(format!("pool for {} is empty", task.as_str()));
            }
        }
        if self.orchestrator.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        let muses = self.muse_profiles();
        for id in 1..=self.muse_groups {
            if !muses.iter().any(|m| m.muse_id as usize == id) {
                return bad(format!("no profile for muse {id}"));
            }
        }
        self.score
            .validate()
            .map_err(|e| ShowError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Every random choice a show makes is derived from one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShowSeeds {
    pub assignment: u64,
    pub pipeline: u64,
    pub oracle: u64,
}

impl ShowSeeds {
    pub const KEYS: [&'static str; 3] = ["assignment", "pipeline", "oracle"];

    pub fn from_base(seed: u64) -> Self {
        use crate::digest::derive_seed;
        Self {
            assignment: derive_seed(seed, "assignment"),
            pipeline: derive_seed(seed, "pipeline"),
            oracle: derive_seed(seed, "oracle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShowError {
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed recording: {0}")]
    MalformedRecording(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Moderation(#[from] ModerationError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("no cue has been triggered yet")]
    NoCue,
}
