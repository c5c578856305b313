use std::fmt;

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Half-open range of denoising steps `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub start: u32,
    pub end: u32,
}

impl StepRange {
    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, step: u32) -> bool {
        (self.start..self.end).contains(&step)
    }

    pub fn is_strict_subset_of(&self, other: &StepRange) -> bool {
        !self.is_empty()
            && self.start >= other.start
            && self.end <= other.end
            && (self.start > other.start || self.end < other.end)
    }

    /// Last step in the range, inclusive.
    pub fn last(&self) -> Option<u32> {
        (!self.is_empty()).then(|| self.end - 1)
    }
}

impl fmt::Display for StepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// When the pose control is switched on and off during identity-conditioned
/// generation. The identity control runs for every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlScheduleConfig {
    pub pose_start_step: u32,
    /// Last pose step as a fraction of the total, floored.
    pub pose_end_fraction: f64,
}

impl Default for ControlScheduleConfig {
    fn default() -> Self {
        Self {
            pose_start_step: 1,
            pose_end_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub identity: StepRange,
    pub pose: StepRange,
}

pub const MIN_STEPS: u32 = 4;

/// Identity control over `[0, N)`; pose control from step 1 through step
/// `floor(N/2)` inclusive.
pub fn control_schedule(total_steps: u32) -> Result<ControlSchedule, PipelineError> {
    control_schedule_with(total_steps, &ControlScheduleConfig::default())
}

pub fn control_schedule_with(
    total_steps: u32,
    cfg: &ControlScheduleConfig,
) -> Result<ControlSchedule, PipelineError> {
    if total_steps < MIN_STEPS {
        return Err(PipelineError::TooFewSteps(total_steps));
    }
    let last = ((total_steps as f64) * cfg.pose_end_fraction).floor() as u32;
    let last = last.clamp(cfg.pose_start_step, total_steps - 1);
    Ok(ControlSchedule {
        identity: StepRange {
            start: 0,
            end: total_steps,
        },
        pose: StepRange {
            start: cfg.pose_start_step,
            end: last + 1,
        },
    })
}
