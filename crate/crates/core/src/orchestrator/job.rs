use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clock::Millis;

use super::OrchestratorError;

/// The three generation pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    T1,
    T2,
    T3,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::T1, TaskType::T2, TaskType::T3];

    pub fn index(self) -> usize {
        match self {
            TaskType::T1 => 0,
            TaskType::T2 => 1,
            TaskType::T3 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::T1 => "T1",
            TaskType::T2 => "T2",
            TaskType::T3 => "T3",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T1" => Ok(TaskType::T1),
            "T2" => Ok(TaskType::T2),
            "T3" => Ok(TaskType::T3),
            other => Err(OrchestratorError::UnknownTask(other.to_string())),
        }
    }
}

/// Queue name for a task. The mapping is fixed.
pub fn route(task: TaskType) -> &'static str {
    match task {
        TaskType::T1 => "gen-background",
        TaskType::T2 => "gen-pose",
        TaskType::T3 => "gen-object",
    }
}

/// [`route`] for task names arriving as text.
pub fn route_name(task: &str) -> Result<&'static str, OrchestratorError> {
    task.parse().map(route)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobState {
    Queued,
    Dispatched,
    Stage(u32),
    PendingModeration,
    Approved,
    Rejected,
    Published,
    Substituted,
    DeadLetter,
}

impl JobState {
    pub fn is_in_flight(self) -> bool {
        matches!(self, JobState::Dispatched | JobState::Stage(_))
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Published | JobState::Substituted | JobState::DeadLetter
        )
    }

    /// Whether `self -> next` is a legal edge. The only back-edge is the
    /// retry from an in-flight state to `Queued`.
    pub fn can_transition_to(self, next: JobState) -> bool {
        use JobState::*;
        match (self, next) {
            (Queued, Dispatched) => true,
            (Dispatched, Stage(1)) => true,
            (Stage(k), Stage(n)) => n == k + 1,
            (Dispatched | Stage(_), PendingModeration | Queued | DeadLetter) => true,
            (PendingModeration, Approved | Rejected) => true,
            (Approved, Published) => true,
            (Rejected, Substituted) => true,
            _ => false,
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobState::Queued => f.write_str("QUEUED"),
            JobState::Dispatched => f.write_str("DISPATCHED"),
            JobState::Stage(k) => write!(f, "STAGE({k})"),
            JobState::PendingModeration => f.write_str("PENDING_MODERATION"),
            JobState::Approved => f.write_str("APPROVED"),
            JobState::Rejected => f.write_str("REJECTED"),
            JobState::Published => f.write_str("PUBLISHED"),
            JobState::Substituted => f.write_str("SUBSTITUTED"),
            JobState::DeadLetter => f.write_str("DEAD_LETTER"),
        }
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "QUEUED" => JobState::Queued,
            "DISPATCHED" => JobState::Dispatched,
            "PENDING_MODERATION" => JobState::PendingModeration,
            "APPROVED" => JobState::Approved,
            "REJECTED" => JobState::Rejected,
            "PUBLISHED" => JobState::Published,
            "SUBSTITUTED" => JobState::Substituted,
            "DEAD_LETTER" => JobState::DeadLetter,
            other => {
                let k = other
                    .strip_prefix("STAGE(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| format!("unknown job state {other}"))?;
                JobState::Stage(k)
            }
        })
    }
}

impl Serialize for JobState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for JobState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStamp {
    pub label: String,
    pub t_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub submission_id: String,
    pub task_type: TaskType,
    pub state: JobState,
    pub attempts: u32,
    pub stage_timestamps: Vec<StageStamp>,
    pub assigned_worker: Option<usize>,
}

impl GenerationJob {
    pub fn new(
        job_id: impl Into<String>,
        submission_id: impl Into<String>,
        task: TaskType,
    ) -> Self {
        Self {
            job_id: job_id.into(),
            submission_id: submission_id.into(),
            task_type: task,
            state: JobState::Queued,
            attempts: 0,
            stage_timestamps: Vec::new(),
            assigned_worker: None,
        }
    }

    pub(crate) fn transition(&mut self, next: JobState) -> Result<(), OrchestratorError> {
        if !self.state.can_transition_to(next) {
            return Err(OrchestratorError::IllegalTransition {
                job_id: self.job_id.clone(),
                from: self.state,
                to: next,
            });
        }
        self.state = next;
        Ok(())
    }

    /// Appends a timestamp. Stamps never go backwards; equal stamps are
    /// allowed because virtual-time stages may take zero milliseconds.
    pub(crate) fn stamp(&mut self, label: impl Into<String>, t_ms: Millis) {
        if let Some(last) = self.stage_timestamps.last() {
            debug_assert!(t_ms >= last.t_ms, "stage stamps went backwards");
        }
        self.stage_timestamps.push(StageStamp {
            label: label.into(),
            t_ms,
        });
    }

    pub fn stamp_of(&self, label: &str) -> Option<Millis> {
        self.stage_timestamps
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.t_ms)
    }

    pub fn enqueued_at(&self) -> Option<Millis> {
        self.stamp_of(super::STAMP_ENQUEUE)
    }

    pub fn published_at(&self) -> Option<Millis> {
        self.stamp_of(super::STAMP_PUBLISH)
    }
}
