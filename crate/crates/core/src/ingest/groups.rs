use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;

use super::IngestError;

pub const DEFAULT_MUSE_GROUPS: usize = 7;
pub const DEFAULT_CAPACITY: usize = 65;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuseAssignment {
    pub device_id: String,
    pub muse_id: u8,
    pub seat_group: String,
}

/// Balanced, seeded assignment of arriving devices to muse groups.
///
/// Arrivals are dealt out in passes of `groups`; each pass visits the groups
/// in a fresh permutation drawn from the show seed. After any prefix of
/// arrivals the largest and smallest group differ by at most one.
#[derive(Debug, Clone)]
pub struct GroupAssigner {
    groups: usize,
    capacity: usize,
    seed: u64,
    counts: Vec<usize>,
    by_device: HashMap<String, MuseAssignment>,
    pass_order: Vec<usize>,
    admitted: usize,
}

impl GroupAssigner {
    pub fn new(groups: usize, capacity: usize, seed: u64) -> Self {
        assert!(
            groups > 0 && groups <= u8::MAX as usize,
            "muse group count out of range"
        );
        Self {
            groups,
            capacity,
            seed,
            counts: vec![0; groups],
            by_device: HashMap::new(),
            pass_order: Vec::new(),
            admitted: 0,
        }
    }

    /// Assigns `device_id`, or returns its existing assignment.
    pub fn assign(&mut self, device_id: &str) -> Result<MuseAssignment, IngestError> {
        if let Some(existing) = self.by_device.get(device_id) {
            return Ok(existing.clone());
        }
        if self.admitted >= self.capacity {
            return Err(IngestError::ShowFull {
                capacity: self.capacity,
            });
        }
        let slot = self.admitted % self.groups;
        if slot == 0 {
            let pass = (self.admitted / self.groups) as u64;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("muse-pass-{pass}")));
            self.pass_order = (0..self.groups).collect();
            self.pass_order.shuffle(&mut rng);
        }
        let group = self.pass_order[slot];
        self.counts[group] += 1;
        self.admitted += 1;
        let muse_id = (group + 1) as u8;
        let assignment = MuseAssignment {
            device_id: device_id.to_string(),
            muse_id,
            seat_group: format!("muse{muse_id}-seat{:02}", self.counts[group]),
        };
        self.by_device
            .insert(device_id.to_string(), assignment.clone());
        Ok(assignment)
    }

    pub fn lookup(&self, device_id: &str) -> Option<&MuseAssignment> {
        self.by_device.get(device_id)
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.counts
    }

    pub fn admitted(&self) -> usize {
        self.admitted
    }
}
