use serde::{Deserialize, Serialize};

use super::job::TaskType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPool {
    pub task_type: TaskType,
    busy: Vec<Option<String>>,
}

impl WorkerPool {
    pub fn new(task_type: TaskType, size: usize) -> Self {
        assert!(size > 0, "worker pool must have at least one worker");
        Self {
            task_type,
            busy: vec![None; size],
        }
    }

    pub fn size(&self) -> usize {
        self.busy.len()
    }

    pub fn in_flight(&self) -> usize {
        self.busy.iter().filter(|w| w.is_some()).count()
    }

    pub fn first_idle(&self) -> Option<usize> {
        self.busy.iter().position(Option::is_none)
    }

    pub fn is_idle(&self, worker: usize) -> bool {
        matches!(self.busy.get(worker), Some(None))
    }

    pub(crate) fn occupy(&mut self, worker: usize, job_id: &str) {
        debug_assert!(self.busy[worker].is_none());
        self.busy[worker] = Some(job_id.to_string());
    }

    pub(crate) fn release(&mut self, worker: usize) {
        self.busy[worker] = None;
    }

    pub fn running(&self, worker: usize) -> Option<&str> {
        self.busy.get(worker).and_then(|w| w.as_deref())
    }
}
