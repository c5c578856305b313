//! Virtual-time execution.
//!
//! [`EventQueue`] is the single-scheduler heap shared by the benchmark and
//! show replay: events fire in `(timestamp, key, insertion)` order, so ties
//! break by job id and runs are fully deterministic. [`run_bench`] drives an
//! [`Orchestrator`] through a pre-sampled [`Workload`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;

use super::{
    ErrorClass, LatencyReport, Orchestrator, OrchestratorConfig, OrchestratorError, PoolSizes,
    TaskType,
};

struct Scheduled<K, E> {
    t: Millis,
    key: K,
    seq: u64,
    event: E,
}

impl<K: Ord, E> PartialEq for Scheduled<K, E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K: Ord, E> Eq for Scheduled<K, E> {}

impl<K: Ord, E> PartialOrd for Scheduled<K, E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord, E> Ord for Scheduled<K, E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        (other.t, &other.key, other.seq).cmp(&(self.t, &self.key, self.seq))
    }
}

/// Min-heap of timed events with stable tie-breaking.
pub struct EventQueue<K: Ord, E> {
    heap: BinaryHeap<Scheduled<K, E>>,
    seq: u64,
}

impl<K: Ord, E> Default for EventQueue<K, E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }
}

impl<K: Ord, E> EventQueue<K, E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Millis, key: K, event: E) {
        self.seq += 1;
        self.heap.push(Scheduled {
            t,
            key,
            seq: self.seq,
            event,
        });
    }

    pub fn pop(&mut self) -> Option<(Millis, E)> {
        self.heap.pop().map(|s| (s.t, s.event))
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.heap.peek().map(|s| s.t)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceDist {
    Fixed {
        ms: Millis,
    },
    /// Integer milliseconds drawn uniformly from `[min_ms, max_ms]`.
    Uniform {
        min_ms: Millis,
        max_ms: Millis,
    },
}

impl ServiceDist {
    pub fn sample(&self, rng: &mut impl Rng) -> Millis {
        match *self {
            ServiceDist::Fixed { ms } => ms,
            ServiceDist::Uniform { min_ms, max_ms } => rng.random_range(min_ms..=max_ms),
        }
    }

    pub fn bounds(&self) -> (Millis, Millis) {
        match *self {
            ServiceDist::Fixed { ms } => (ms, ms),
            ServiceDist::Uniform { min_ms, max_ms } => (min_ms, max_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// `count` arrivals at independent uniform times in `[0, window_ms]`.
    Uniform { count: usize, window_ms: Millis },
    /// `count` arrivals evenly spaced over `[0, window_ms]`.
    Even { count: usize, window_ms: Millis },
    /// Poisson process with the given mean gap, starting at 0.
    Poisson { count: usize, mean_gap_ms: f64 },
}

impl ArrivalProcess {
    fn sample(&self, rng: &mut impl Rng) -> Vec<Millis> {
        let mut times: Vec<Millis> = match *self {
            ArrivalProcess::Uniform { count, window_ms } => (0..count)
                .map(|_| rng.random_range(0..=window_ms))
                .collect(),
            ArrivalProcess::Even { count, window_ms } => (0..count)
                .map(|i| {
                    if count <= 1 {
                        0
                    } else {
                        window_ms * i as Millis / (count as Millis - 1)
                    }
                })
                .collect(),
            ArrivalProcess::Poisson { count, mean_gap_ms } => {
                let mut t = 0.0f64;
                (0..count)
                    .map(|_| {
                        let u: f64 = rng.random::<f64>();
                        t += -mean_gap_ms * (1.0 - u).ln();
                        t.round() as Millis
                    })
                    .collect()
            }
        };
        times.sort_unstable();
        times
    }

    fn count(&self) -> usize {
        match *self {
            ArrivalProcess::Uniform { count, .. }
            | ArrivalProcess::Even { count, .. }
            | ArrivalProcess::Poisson { count, .. } => count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLoad {
    pub task: TaskType,
    pub arrivals: ArrivalProcess,
    pub service: ServiceDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub pools: PoolSizes,
    pub loads: Vec<TaskLoad>,
    pub seed: u64,
    #[serde(default)]
    pub transient_failure_rate: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: Millis,
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff() -> Millis {
    1_000
}

impl BenchConfig {
    /// Production scale: eight workers per task, 20–30 s service for the
    /// background and object tasks, 40–60 s for the pose task, 33 arrivals
    /// per task spread uniformly over two minutes.
    pub fn production_scale(seed: u64) -> Self {
        let load = |task, min_ms, max_ms| TaskLoad {
            task,
            arrivals: ArrivalProcess::Uniform {
                count: 33,
                window_ms: 120_000,
            },
            service: ServiceDist::Uniform { min_ms, max_ms },
        };
        Self {
            pools: PoolSizes::uniform(8),
            loads: vec![
                load(TaskType::T1, 20_000, 30_000),
                load(TaskType::T2, 40_000, 60_000),
                load(TaskType::T3, 20_000, 30_000),
            ],
            seed,
            transient_failure_rate: 0.0,
            max_attempts: 3,
            backoff_base_ms: 1_000,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        for task in TaskType::ALL {
            if self.pools.get(task) == 0 {
                return Err(BenchError::BadConfig(format!("pool for {task} has size 0")));
            }
        }
        for load in &self.loads {
            let (lo, hi) = load.service.bounds();
            if lo > hi {
                return Err(BenchError::BadConfig(format!(
                    "service range for {} is empty",
                    load.task
                )));
            }
            if let ArrivalProcess::Poisson { mean_gap_ms, .. } = load.arrivals {
                if !(mean_gap_ms.is_finite() && mean_gap_ms >= 0.0) {
                    return Err(BenchError::BadConfig(
                        "poisson mean gap must be >= 0".into(),
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.transient_failure_rate) {
            return Err(BenchError::BadConfig(
                "transient_failure_rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            pools: self.pools,
            max_attempts: self.max_attempts,
            backoff_base_ms: self.backoff_base_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("bad bench config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptPlan {
    pub service_ms: Millis,
    pub fails: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub job_id: String,
    pub task: TaskType,
    pub arrival_ms: Millis,
    /// One plan per possible attempt, first attempt first.
    pub attempts: Vec<AttemptPlan>,
}

/// Fully sampled benchmark input: every random quantity is fixed here so the
/// scheduler itself consumes no randomness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub items: Vec<WorkItem>,
}

impl Workload {
    pub fn generate(config: &BenchConfig) -> Result<Workload, BenchError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut raw: Vec<(Millis, usize, TaskType, Vec<AttemptPlan>)> = Vec::new();
        let tries = config.max_attempts as usize + 1;
        for load in &config.loads {
            let times = load.arrivals.sample(&mut rng);
            debug_assert_eq!(times.len(), load.arrivals.count());
            for t in times {
                let attempts = (0..tries)
                    .map(|_| AttemptPlan {
                        service_ms: load.service.sample(&mut rng),
                        fails: config.transient_failure_rate > 0.0
                            && rng.random::<f64>() < config.transient_failure_rate,
                    })
                    .collect();
                raw.push((t, raw.len(), load.task, attempts));
            }
        }
        raw.sort_by_key(|(t, i, _, _)| (*t, *i));
        let items = raw
            .into_iter()
            .enumerate()
            .map(|(n, (arrival_ms, _, task, attempts))| WorkItem {
                job_id: format!("job-{:05}", n + 1),
                task,
                arrival_ms,
                attempts,
            })
            .collect();
        Ok(Workload { items })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub report: LatencyReport,
    /// Publish time of every job, keyed by job id.
    pub completions: BTreeMap<String, Millis>,
    /// Largest number of simultaneously in-flight jobs seen per task.
    pub peak_in_flight: BTreeMap<TaskType, usize>,
    pub publishes: usize,
    pub dead_letters: usize,
    pub wall_ms: u128,
}

enum SimEvent {
    Arrive(usize),
    Finish(String),
    Requeue(String),
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    let workload = Workload::generate(config)?;
    run_workload(&workload, config.orchestrator_config())
}

/// Runs a workload through the orchestrator under virtual time.
pub fn run_workload(
    workload: &Workload,
    config: OrchestratorConfig,
) -> Result<BenchOutcome, BenchError> {
    let started = Instant::now();
    let mut orch = Orchestrator::new("bench", config);
    let mut queue: EventQueue<String, SimEvent> = EventQueue::new();
    let index: BTreeMap<&str, &WorkItem> = workload
        .items
        .iter()
        .map(|w| (w.job_id.as_str(), w))
        .collect();
    for (i, item) in workload.items.iter().enumerate() {
        queue.push(item.arrival_ms, item.job_id.clone(), SimEvent::Arrive(i));
    }

    let mut completions = BTreeMap::new();
    let mut peak: BTreeMap<TaskType, usize> = BTreeMap::new();
    let mut publishes = 0usize;
    let mut dead_letters = 0usize;

    while let Some((now, event)) = queue.pop() {
        match event {
            SimEvent::Arrive(i) => {
                let item = &workload.items[i];
                let job = super::GenerationJob::new(&item.job_id, &item.job_id, item.task);
                orch.enqueue(job, now)?;
            }
            SimEvent::Requeue(job_id) => {
                orch.requeue(&job_id, now)?;
            }
            SimEvent::Finish(job_id) => {
                let job = orch.job(&job_id).expect("finished job exists");
                let plan = index[job_id.as_str()].attempts[job.attempts as usize];
                if plan.fails {
                    let decision = orch.retry_or_deadletter(&job_id, ErrorClass::Transient, now)?;
                    match decision.retry_at {
                        Some(at) => queue.push(at, job_id.clone(), SimEvent::Requeue(job_id)),
                        None => {
                            orch.record_publish(&job_id, now)?;
                            dead_letters += 1;
                            publishes += 1;
                            completions.insert(job_id, now);
                        }
                    }
                } else {
                    orch.record_stage(&job_id, "service", now)?;
                    orch.await_moderation(&job_id, now)?;
                    orch.record_moderation(&job_id, true, now)?;
                    orch.record_publish(&job_id, now)?;
                    publishes += 1;
                    completions.insert(job_id, now);
                }
            }
        }
        for task in TaskType::ALL {
            for a in orch.dispatch(task, now) {
                let plan = index[a.job_id.as_str()].attempts[a.attempt as usize];
                queue.push(
                    now + plan.service_ms,
                    a.job_id.clone(),
                    SimEvent::Finish(a.job_id),
                );
            }
            let entry = peak.entry(task).or_default();
            *entry = (*entry).max(orch.in_flight(task));
        }
    }

    let report = orch.latency_report()?;
    Ok(BenchOutcome {
        report,
        completions,
        peak_in_flight: peak,
        publishes,
        dead_letters,
        wall_ms: started.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_task(pool: usize, arrivals: ArrivalProcess, service: ServiceDist) -> BenchConfig {
        BenchConfig {
            pools: PoolSizes {
                t1: pool,
                t2: 1,
                t3: 1,
            },
            loads: vec![TaskLoad {
                task: TaskType::T1,
                arrivals,
                service,
            }],
            seed: 1,
            transient_failure_rate: 0.0,
            max_attempts: 3,
            backoff_base_ms: 1_000,
        }
    }

    #[test]
    fn event_queue_breaks_ties_by_key() {
        let mut q = EventQueue::new();
        q.push(5, "job-2".to_string(), 'b');
        q.push(5, "job-1".to_string(), 'a');
        q.push(1, "job-9".to_string(), 'z');
        let order: Vec<char> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!['z', 'a', 'b']);
    }

    #[test]
    fn single_worker_serializes_jobs() {
        let cfg = single_task(
            1,
            ArrivalProcess::Even {
                count: 2,
                window_ms: 0,
            },
            ServiceDist::Fixed { ms: 5_000 },
        );
        let out = run_bench(&cfg).unwrap();
        assert_eq!(out.completions["job-00001"], 5_000);
        assert_eq!(out.completions["job-00002"], 10_000);
        let second = out.report.job("job-00002").unwrap();
        assert_eq!(second.stages[0].label, "dispatch");
        assert_eq!(second.stages[0].duration_ms, 5_000);
    }

    #[test]
    fn zero_pool_is_bad_config() {
        let cfg = single_task(
            0,
            ArrivalProcess::Even {
                count: 1,
                window_ms: 0,
            },
            ServiceDist::Fixed { ms: 1 },
        );
        assert!(matches!(run_bench(&cfg), Err(BenchError::BadConfig(_))));
    }

    #[test]
    fn zero_service_time_is_pure_orchestration() {
        let cfg = single_task(
            8,
            ArrivalProcess::Uniform {
                count: 50,
                window_ms: 10_000,
            },
            ServiceDist::Fixed { ms: 0 },
        );
        let out = run_bench(&cfg).unwrap();
        assert!(out.report.end_to_end.p95_ms < 1);
        assert!(out.report.jobs.iter().all(|j| j.end_to_end_ms == 0));
    }

    #[test]
    fn in_flight_never_exceeds_pool() {
        let mut cfg = BenchConfig::production_scale(4);
        cfg.pools = PoolSizes {
            t1: 3,
            t2: 5,
            t3: 2,
        };
        let out = run_bench(&cfg).unwrap();
        assert!(out.peak_in_flight[&TaskType::T1] <= 3);
        assert!(out.peak_in_flight[&TaskType::T2] <= 5);
        assert!(out.peak_in_flight[&TaskType::T3] <= 2);
    }

    #[test]
    fn workload_is_seed_deterministic() {
        let cfg = BenchConfig::production_scale(9);
        assert_eq!(
            Workload::generate(&cfg).unwrap(),
            Workload::generate(&cfg).unwrap()
        );
    }

    #[test]
    fn fuzzed_failures_publish_every_job_exactly_once() {
        let cfg = BenchConfig {
            pools: PoolSizes {
                t1: 8,
                t2: 8,
                t3: 8,
            },
            loads: TaskType::ALL
                .into_iter()
                .map(|task| TaskLoad {
                    task,
                    arrivals: ArrivalProcess::Poisson {
                        count: 3_400,
                        mean_gap_ms: 3_000.0,
                    },
                    service: ServiceDist::Uniform {
                        min_ms: 1_000,
                        max_ms: 30_000,
                    },
                })
                .collect(),
            seed: 77,
            transient_failure_rate: 0.3,
            max_attempts: 3,
            backoff_base_ms: 1_000,
        };
        let out = run_bench(&cfg).unwrap();
        assert_eq!(out.completions.len(), 10_200);
        assert_eq!(out.publishes, 10_200);
        assert!(out.dead_letters > 0);
        for job in out.report.jobs.iter() {
            assert!(job.final_state.is_terminal());
            let publishes = job.stages.iter().filter(|s| s.label == "publish").count();
            assert_eq!(publishes, 1);
        }
    }
}
