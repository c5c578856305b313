//! Per-task FIFO queues, worker-pool dispatch, retry and dead-letter policy,
//! and per-stage latency accounting.
//!
//! [`Orchestrator`] is a synchronous state machine: callers pass the current
//! time into every mutating call and serialize access behind one lock. The
//! live service drives it from worker tasks on the wall clock; [`sim`] drives
//! it from a deterministic event heap in virtual time.

mod job;
mod journal;
mod latency;
mod pool;
pub mod sim;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;

pub use job::{route, route_name, GenerationJob, JobState, StageStamp, TaskType};
pub use journal::{read_journal, Journal, JournalRecord};
pub use latency::{
    nearest_rank, JobLatency, LatencyReport, StageDuration, Summary, BUDGET_MAX_MS, BUDGET_MIN_MS,
};
pub use pool::WorkerPool;

pub const STAMP_ENQUEUE: &str = "enqueue";
pub const STAMP_DISPATCH: &str = "dispatch";
pub const STAMP_MODERATION: &str = "moderation";
pub const STAMP_PUBLISH: &str = "publish";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrchestratorError {
    #[error("unknown task type {0}")]
    UnknownTask(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("queue is closed")]
    QueueClosed,
    #[error("job {job_id}: illegal transition {from} -> {to}")]
    IllegalTransition {
        job_id: String,
        from: JobState,
        to: JobState,
    },
    #[error("job {0} was already published")]
    AlreadyPublished(String),
    #[error("no completed jobs")]
    NoCompletedJobs,
    #[error("journal: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Worth retrying: timeouts, throttling, flaky endpoints.
    Transient,
    /// The backend rejected the input; retrying cannot help.
    Permanent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

impl PoolSizes {
    pub fn uniform(n: usize) -> Self {
        Self {
            t1: n,
            t2: n,
            t3: n,
        }
    }

    pub fn get(&self, task: TaskType) -> usize {
        match task {
            TaskType::T1 => self.t1,
            TaskType::T2 => self.t2,
            TaskType::T3 => self.t3,
        }
    }
}

impl Default for PoolSizes {
    fn default() -> Self {
        Self::uniform(8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub pools: PoolSizes,
    pub max_attempts: u32,
    /// First retry delay; each later retry doubles it.
    pub backoff_base_ms: Millis,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            pools: PoolSizes::default(),
            max_attempts: 3,
            backoff_base_ms: 1_000,
        }
    }
}

impl OrchestratorConfig {
    /// Delay before retry number `attempt` (1-based): base, 2·base, 4·base...
    pub fn backoff_ms(&self, attempt: u32) -> Millis {
        self.backoff_base_ms << attempt.saturating_sub(1).min(32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub job_id: String,
    pub task_type: TaskType,
    pub worker: usize,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryDecision {
    pub state: JobState,
    pub attempts: u32,
    /// When the job should be put back on its queue; `None` once dead-lettered.
    pub retry_at: Option<Millis>,
}

#[derive(Debug)]
struct JobQueue {
    items: VecDeque<String>,
}

#[derive(Debug)]
pub struct Orchestrator {
    show_id: String,
    config: OrchestratorConfig,
    jobs: BTreeMap<String, GenerationJob>,
    queues: [JobQueue; 3],
    pools: [WorkerPool; 3],
    closed: bool,
    next_job: u64,
    journal: Option<Journal>,
}

impl Orchestrator {
    pub fn new(show_id: impl Into<String>, config: OrchestratorConfig) -> Self {
        let pools = TaskType::ALL.map(|t| WorkerPool::new(t, config.pools.get(t)));
        Self {
            show_id: show_id.into(),
            config,
            jobs: BTreeMap::new(),
            queues: [(); 3].map(|_| JobQueue {
                items: VecDeque::new(),
            }),
            pools,
            closed: false,
            next_job: 1,
            journal: None,
        }
    }

    /// Journal-backed orchestrator. Records already in the file are replayed:
    /// queued jobs go back on their queues in order, and jobs that were on a
    /// worker when the process died are re-queued without spending an attempt.
    pub fn with_journal(
        show_id: impl Into<String>,
        config: OrchestratorConfig,
        path: impl AsRef<Path>,
    ) -> Result<Self, OrchestratorError> {
        let (journal, records) =
            Journal::open(path).map_err(|e| OrchestratorError::Journal(e.to_string()))?;
        let mut orch = Self::new(show_id, config);
        orch.recover(&records)?;
        orch.journal = Some(journal);
        Ok(orch)
    }

    fn recover(&mut self, records: &[JournalRecord]) -> Result<(), OrchestratorError> {
        let mut last_queue_event: BTreeMap<String, usize> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.event == "close" {
                self.closed = true;
                continue;
            }
            let job: GenerationJob = serde_json::from_value(rec.detail.clone())
                .map_err(|e| OrchestratorError::Journal(format!("record {i}: {e}")))?;
            if matches!(rec.event.as_str(), "enqueue" | "requeue") {
                last_queue_event.insert(job.job_id.clone(), i);
            }
            self.jobs.insert(job.job_id.clone(), job);
        }
        self.next_job = self.jobs.len() as u64 + 1;

        let mut requeue: Vec<(usize, String)> = Vec::new();
        for job in self.jobs.values_mut() {
            if job.state.is_in_flight() {
                job.state = JobState::Queued;
                job.assigned_worker = None;
            }
            if job.state == JobState::Queued {
                let order = last_queue_event
                    .get(&job.job_id)
                    .copied()
                    .unwrap_or(usize::MAX);
                requeue.push((order, job.job_id.clone()));
            }
        }
        requeue.sort();
        for (_, id) in requeue {
            let task = self.jobs[&id].task_type;
            self.queues[task.index()].items.push_back(id);
        }
        Ok(())
    }

    fn log(&mut self, t_ms: Millis, job_id: &str, event: &str) {
        let Some(journal) = self.journal.as_mut() else {
            return;
        };
        let detail = self
            .jobs
            .get(job_id)
            .map(|j| serde_json::to_value(j).expect("job serializes"))
            .unwrap_or(serde_json::Value::Null);
        let record = JournalRecord {
            t_ms,
            job_id: job_id.to_string(),
            event: event.to_string(),
            detail,
        };
        // Journal IO failure must not take the show down; the in-memory state
        // stays authoritative for this process.
        let _ = journal.append(&record);
    }

    pub fn show_id(&self) -> &str {
        &self.show_id
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Creates a job for `submission_id` and enqueues it.
    pub fn submit(
        &mut self,
        submission_id: &str,
        task: TaskType,
        now: Millis,
    ) -> Result<(String, usize), OrchestratorError> {
        if self.closed {
            return Err(OrchestratorError::QueueClosed);
        }
        let job_id = format!("job-{:05}", self.next_job);
        self.next_job += 1;
        let position = self.enqueue(GenerationJob::new(&job_id, submission_id, task), now)?;
        Ok((job_id, position))
    }

    /// Appends a `Queued` job to its task queue and returns how many jobs are
    /// ahead of it.
    pub fn enqueue(
        &mut self,
        mut job: GenerationJob,
        now: Millis,
    ) -> Result<usize, OrchestratorError> {
        if self.closed {
            return Err(OrchestratorError::QueueClosed);
        }
        if job.state != JobState::Queued {
            return Err(OrchestratorError::IllegalTransition {
                job_id: job.job_id.clone(),
                from: job.state,
                to: JobState::Queued,
            });
        }
        let queue = &mut self.queues[job.task_type.index()];
        let position = queue.items.len();
        queue.items.push_back(job.job_id.clone());
        job.stamp(STAMP_ENQUEUE, now);
        let id = job.job_id.clone();
        self.jobs.insert(id.clone(), job);
        self.log(now, &id, "enqueue");
        Ok(position)
    }

    /// Puts a job that is waiting out its retry backoff back on its queue.
    pub fn requeue(&mut self, job_id: &str, now: Millis) -> Result<usize, OrchestratorError> {
        let job = self.job_mut(job_id)?;
        if job.state != JobState::Queued {
            return Err(OrchestratorError::IllegalTransition {
                job_id: job_id.to_string(),
                from: job.state,
                to: JobState::Queued,
            });
        }
        let attempt = job.attempts;
        job.stamp(format!("requeue#{attempt}"), now);
        let task = job.task_type;
        let queue = &mut self.queues[task.index()];
        let position = queue.items.len();
        queue.items.push_back(job_id.to_string());
        self.log(now, job_id, "requeue");
        Ok(position)
    }

    /// Moves head-of-queue jobs onto idle workers until either runs out.
    pub fn dispatch(&mut self, task: TaskType, now: Millis) -> Vec<Assignment> {
        let mut out = Vec::new();
        while let Some(worker) = self.pools[task.index()].first_idle() {
            match self.dispatch_to(task, worker, now) {
                Some(a) => out.push(a),
                None => break,
            }
        }
        out
    }

    /// Gives the head-of-queue job to a specific idle worker.
    pub fn dispatch_to(
        &mut self,
        task: TaskType,
        worker: usize,
        now: Millis,
    ) -> Option<Assignment> {
        let ti = task.index();
        if !self.pools[ti].is_idle(worker) {
            return None;
        }
        let job_id = self.queues[ti].items.pop_front()?;
        let job = self.jobs.get_mut(&job_id).expect("queued job exists");
        job.transition(JobState::Dispatched)
            .expect("queued job can be dispatched");
        job.assigned_worker = Some(worker);
        let label = if job.attempts == 0 {
            STAMP_DISPATCH.to_string()
        } else {
            format!("{STAMP_DISPATCH}#{}", job.attempts)
        };
        job.stamp(label, now);
        let attempt = job.attempts;
        self.pools[ti].occupy(worker, &job_id);
        self.log(now, &job_id, "dispatch");
        Some(Assignment {
            job_id,
            task_type: task,
            worker,
            attempt,
        })
    }

    /// Records completion of the next pipeline stage.
    pub fn record_stage(
        &mut self,
        job_id: &str,
        label: &str,
        now: Millis,
    ) -> Result<JobState, OrchestratorError> {
        let job = self.job_mut(job_id)?;
        let next = match job.state {
            JobState::Dispatched => JobState::Stage(1),
            JobState::Stage(k) => JobState::Stage(k + 1),
            other => {
                return Err(OrchestratorError::IllegalTransition {
                    job_id: job_id.to_string(),
                    from: other,
                    to: JobState::Stage(1),
                })
            }
        };
        job.transition(next)?;
        job.stamp(label, now);
        self.log(now, job_id, "stage");
        Ok(next)
    }

    /// Generation finished: the worker is freed and the job waits for review.
    pub fn await_moderation(&mut self, job_id: &str, now: Millis) -> Result<(), OrchestratorError> {
        let job = self.job_mut(job_id)?;
        job.transition(JobState::PendingModeration)?;
        let worker = job.assigned_worker.take();
        let task = job.task_type;
        if let Some(w) = worker {
            self.pools[task.index()].release(w);
        }
        self.log(now, job_id, "pending_moderation");
        Ok(())
    }

    pub fn record_moderation(
        &mut self,
        job_id: &str,
        approved: bool,
        now: Millis,
    ) -> Result<(), OrchestratorError> {
        let job = self.job_mut(job_id)?;
        job.transition(if approved {
            JobState::Approved
        } else {
            JobState::Rejected
        })?;
        job.stamp(STAMP_MODERATION, now);
        self.log(now, job_id, "moderation");
        Ok(())
    }

    /// Marks the job's asset (or its fallback) as shown. Each job publishes
    /// at most once: approved jobs become `Published`, rejected jobs
    /// `Substituted`, and dead-lettered jobs stay `DeadLetter` with their
    /// fallback publish stamped.
    pub fn record_publish(
        &mut self,
        job_id: &str,
        now: Millis,
    ) -> Result<JobState, OrchestratorError> {
        let job = self.job_mut(job_id)?;
        if job.published_at().is_some() {
            return Err(OrchestratorError::AlreadyPublished(job_id.to_string()));
        }
        match job.state {
            JobState::Approved => job.transition(JobState::Published)?,
            JobState::Rejected => job.transition(JobState::Substituted)?,
            JobState::DeadLetter => {}
            other => {
                return Err(OrchestratorError::IllegalTransition {
                    job_id: job_id.to_string(),
                    from: other,
                    to: JobState::Published,
                })
            }
        }
        job.stamp(STAMP_PUBLISH, now);
        let state = job.state;
        self.log(now, job_id, "publish");
        Ok(state)
    }

    /// Applies the retry policy to a failed in-flight job and frees its worker.
    pub fn retry_or_deadletter(
        &mut self,
        job_id: &str,
        class: ErrorClass,
        now: Millis,
    ) -> Result<RetryDecision, OrchestratorError> {
        let config = self.config.clone();
        let max_attempts = config.max_attempts;
        let job = self.job_mut(job_id)?;
        if !job.state.is_in_flight() {
            return Err(OrchestratorError::IllegalTransition {
                job_id: job_id.to_string(),
                from: job.state,
                to: JobState::Queued,
            });
        }
        let task = job.task_type;
        let worker = job.assigned_worker.take();
        let decision = if class == ErrorClass::Transient && job.attempts < max_attempts {
            job.transition(JobState::Queued)?;
            job.attempts += 1;
            job.stamp(format!("failed#{}", job.attempts), now);
            RetryDecision {
                state: JobState::Queued,
                attempts: job.attempts,
                retry_at: Some(now + config.backoff_ms(job.attempts)),
            }
        } else {
            job.transition(JobState::DeadLetter)?;
            job.stamp("dead_letter", now);
            RetryDecision {
                state: JobState::DeadLetter,
                attempts: job.attempts,
                retry_at: None,
            }
        };
        if let Some(w) = worker {
            self.pools[task.index()].release(w);
        }
        let event = if decision.retry_at.is_some() {
            "retry"
        } else {
            "dead_letter"
        };
        self.log(now, job_id, event);
        Ok(decision)
    }

    pub fn close(&mut self, now: Millis) {
        self.closed = true;
        if let Some(journal) = self.journal.as_mut() {
            let _ = journal.append(&JournalRecord {
                t_ms: now,
                job_id: String::new(),
                event: "close".into(),
                detail: serde_json::Value::Null,
            });
        }
    }

    pub fn latency_report(&self) -> Result<LatencyReport, OrchestratorError> {
        LatencyReport::build(&self.show_id, self.jobs.values())
            .ok_or(OrchestratorError::NoCompletedJobs)
    }

    pub fn job(&self, job_id: &str) -> Option<&GenerationJob> {
        self.jobs.get(job_id)
    }

    fn job_mut(&mut self, job_id: &str) -> Result<&mut GenerationJob, OrchestratorError> {
        self.jobs
            .get_mut(job_id)
            .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &GenerationJob> {
        self.jobs.values()
    }

    pub fn queue_len(&self, task: TaskType) -> usize {
        self.queues[task.index()].items.len()
    }

    pub fn queued_ids(&self, task: TaskType) -> impl Iterator<Item = &str> {
        self.queues[task.index()].items.iter().map(String::as_str)
    }

    pub fn in_flight(&self, task: TaskType) -> usize {
        self.pools[task.index()].in_flight()
    }

    pub fn pool(&self, task: TaskType) -> &WorkerPool {
        &self.pools[task.index()]
    }
}
