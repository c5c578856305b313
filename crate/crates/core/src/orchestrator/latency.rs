use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Millis;

use super::job::{GenerationJob, JobState, TaskType};

pub const BUDGET_MIN_MS: Millis = 30_000;
pub const BUDGET_MAX_MS: Millis = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDuration {
    pub label: String,
    pub duration_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobLatency {
    pub job_id: String,
    pub task_type: TaskType,
    pub final_state: JobState,
    pub enqueue_ms: Millis,
    pub publish_ms: Millis,
    pub end_to_end_ms: Millis,
    /// Duration of each stamp measured from the stamp before it.
    pub stages: Vec<StageDuration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub p50_ms: Millis,
    pub p95_ms: Millis,
    pub max_ms: Millis,
}

impl Summary {
    pub fn of(values: &[Millis]) -> Option<Summary> {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        Some(Summary {
            count: sorted.len(),
            p50_ms: nearest_rank(&sorted, 50.0)?,
            p95_ms: nearest_rank(&sorted, 95.0)?,
            max_ms: *sorted.last()?,
        })
    }
}

/// Nearest-rank percentile of an ascending slice: the smallest value with at
/// least `p` percent of observations at or below it.
pub fn nearest_rank(sorted: &[Millis], p: f64) -> Option<Millis> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub show_id: String,
    pub jobs: Vec<JobLatency>,
    pub end_to_end: Summary,
    pub per_task: BTreeMap<TaskType, Summary>,
    pub per_stage: BTreeMap<String, Summary>,
    pub budget_window_ms: [Millis; 2],
    pub budget_violations: Vec<String>,
}

impl LatencyReport {
    /// Builds a report over every job that reached a publish stamp. Returns
    /// `None` when there is none.
    pub fn build<'a>(
        show_id: &str,
        jobs: impl IntoIterator<Item = &'a GenerationJob>,
    ) -> Option<LatencyReport> {
        let mut rows: Vec<JobLatency> = jobs.into_iter().filter_map(job_latency).collect();
        if rows.is_empty() {
            return None;
        }
        rows.sort_by(|a, b| a.job_id.cmp(&b.job_id));

        let e2e: Vec<Millis> = rows.iter().map(|r| r.end_to_end_ms).collect();
        let mut by_task: BTreeMap<TaskType, Vec<Millis>> = BTreeMap::new();
        let mut by_stage: BTreeMap<String, Vec<Millis>> = BTreeMap::new();
        for row in &rows {
            by_task
                .entry(row.task_type)
                .or_default()
                .push(row.end_to_end_ms);
            for stage in &row.stages {
                by_stage
                    .entry(stage.label.clone())
                    .or_default()
                    .push(stage.duration_ms);
            }
        }
        let budget_violations = rows
            .iter()
            .filter(|r| r.end_to_end_ms > BUDGET_MAX_MS)
            .map(|r| r.job_id.clone())
            .collect();

        Some(LatencyReport {
            show_id: show_id.to_string(),
            end_to_end: Summary::of(&e2e)?,
            per_task: by_task
                .into_iter()
                .filter_map(|(k, v)| Some((k, Summary::of(&v)?)))
                .collect(),
            per_stage: by_stage
                .into_iter()
                .filter_map(|(k, v)| Some((k, Summary::of(&v)?)))
                .collect(),
            budget_window_ms: [BUDGET_MIN_MS, BUDGET_MAX_MS],
            budget_violations,
            jobs: rows,
        })
    }

    pub fn job(&self, job_id: &str) -> Option<&JobLatency> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }
}

fn job_latency(job: &GenerationJob) -> Option<JobLatency> {
    let enqueue_ms = job.enqueued_at()?;
    let publish_ms = job.published_at()?;
    let stages = job
        .stage_timestamps
        .windows(2)
        .map(|w| StageDuration {
            label: w[1].label.clone(),
            duration_ms: w[1].t_ms - w[0].t_ms,
        })
        .collect();
    Some(JobLatency {
        job_id: job.job_id.clone(),
        task_type: job.task_type,
        final_state: job.state,
        enqueue_ms,
        publish_ms,
        end_to_end_ms: publish_ms - enqueue_ms,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::job::StageStamp;

    fn job_with(stamps: &[(&str, Millis)]) -> GenerationJob {
        let mut job = GenerationJob::new("j1", "s1", TaskType::T1);
        job.state = JobState::Published;
        job.stage_timestamps = stamps
            .iter()
            .map(|(l, t)| StageStamp {
                label: l.to_string(),
                t_ms: *t,
            })
            .collect();
        job
    }

    #[test]
    fn single_job_inside_budget() {
        let job = job_with(&[("enqueue", 0), ("publish", 45_000)]);
        let report = LatencyReport::build("show", [&job]).unwrap();
        assert_eq!(report.end_to_end.p50_ms, 45_000);
        assert_eq!(report.end_to_end.p95_ms, 45_000);
        assert!(report.budget_violations.is_empty());
    }

    #[test]
    fn slow_job_is_a_violation() {
        let job = job_with(&[("enqueue", 0), ("publish", 75_000)]);
        let report = LatencyReport::build("show", [&job]).unwrap();
        assert_eq!(report.budget_violations, vec!["j1".to_string()]);
    }

    #[test]
    fn stage_durations_are_differences() {
        let job = job_with(&[
            ("enqueue", 0),
            ("stage1", 10_000),
            ("moderation", 40_000),
            ("publish", 45_000),
        ]);
        let report = LatencyReport::build("show", [&job]).unwrap();
        let row = &report.jobs[0];
        assert_eq!(row.stages[0].label, "stage1");
        assert_eq!(row.stages[0].duration_ms, 10_000);
        assert_eq!(row.stages[1].duration_ms, 30_000);
        assert_eq!(report.per_stage["moderation"].max_ms, 30_000);
    }

    #[test]
    fn unpublished_jobs_are_excluded() {
        let job = GenerationJob::new("j", "s", TaskType::T2);
        assert!(LatencyReport::build("show", [&job]).is_none());
    }

    #[test]
    fn nearest_rank_matches_definition() {
        let v: Vec<Millis> = (1..=20).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(10));
        assert_eq!(nearest_rank(&v, 95.0), Some(19));
        assert_eq!(nearest_rank(&v, 100.0), Some(20));
        assert_eq!(nearest_rank(&[7], 95.0), Some(7));
    }
}
