//! Time sources.
//!
//! All timestamps in the engine are milliseconds from a show-relative epoch
//! and flow through [`TimeSource`], so the same orchestration code runs on the
//! wall clock during a live show and on a [`VirtualClock`] during replay and
//! benchmarking.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Milliseconds since the show epoch.
pub type Millis = u64;

pub trait TimeSource: Send + Sync {
    fn now_ms(&self) -> Millis;
}

/// Monotonic wall clock anchored at construction.
#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl TimeSource for WallClock {
    fn now_ms(&self) -> Millis {
        self.origin.elapsed().as_millis() as Millis
    }
}

/// Clock that only moves when a scheduler advances it.
///
/// Clones share the same underlying time.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves time forward to `t`. Moving backwards is a scheduler bug.
    pub fn advance_to(&self, t: Millis) {
        let prev = self.now.swap(t, Ordering::SeqCst);
        debug_assert!(t >= prev, "virtual clock moved backwards: {prev} -> {t}");
    }
}

impl TimeSource for VirtualClock {
    fn now_ms(&self) -> Millis {
        self.now.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_shared_between_clones() {
        let a = VirtualClock::new();
        let b = a.clone();
        a.advance_to(1500);
        assert_eq!(b.now_ms(), 1500);
    }
}
