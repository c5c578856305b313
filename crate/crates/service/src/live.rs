//! Drives a [`Show`] on the wall clock: work orders run on blocking threads,
//! retries wait out their backoff on timers, and a ticker applies the review
//! timeout policy.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use shrine_core::clock::{Millis, TimeSource};
use shrine_core::pipelines::tasks::StageRecord;
use shrine_core::show::{JobOutcome, Show, WorkOrder};
use tokio::runtime::Handle;
use tokio::task::JoinHandle;

/// Milliseconds since the Unix epoch, kept monotonic within the process.
/// Survives a restart, so journal timestamps keep increasing.
#[derive(Debug)]
pub struct EpochClock {
    origin_ms: Millis,
    origin: Instant,
}

impl EpochClock {
    pub fn new() -> Self {
        let since = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default();
        Self {
            origin_ms: since.as_millis() as Millis,
            origin: Instant::now(),
        }
    }
}

impl Default for EpochClock {
    fn default() -> Self {
        Self::new()
    }
}

impl TimeSource for EpochClock {
    fn now_ms(&self) -> Millis {
        self.origin_ms + self.origin.elapsed().as_millis() as Millis
    }
}

struct Inner {
    show: Mutex<Show>,
    clock: Box<dyn TimeSource>,
    latency_scale: f64,
    runtime: Handle,
}

/// Shared handle to a running show.
#[derive(Clone)]
pub struct LiveShow {
    inner: Arc<Inner>,
}

impl LiveShow {
    /// `latency_scale` stretches each reported stage latency into a real
    /// sleep before the stage is stamped; 0 runs as fast as the backends
    /// answer, 1 plays mock latencies in real time. Must be called inside a
    /// tokio runtime.
    pub fn new(show: Show, latency_scale: f64) -> Self {
        Self::with_clock(show, latency_scale, Box::new(EpochClock::new()))
    }

    pub fn with_clock(show: Show, latency_scale: f64, clock: Box<dyn TimeSource>) -> Self {
        Self {
            inner: Arc::new(Inner {
                show: Mutex::new(show),
                clock,
                latency_scale: latency_scale.max(0.0),
                runtime: Handle::current(),
            }),
        }
    }

    pub fn now(&self) -> Millis {
        self.inner.clock.now_ms()
    }

    pub fn lock(&self) -> MutexGuard<'_, Show> {
        self.inner.show.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` under the show lock. The timestamp is taken after the lock
    /// is held, so stamps follow the order in which changes are applied.
    pub fn with<R>(&self, f: impl FnOnce(&mut Show, Millis) -> R) -> R {
        let mut show = self.lock();
        let now = self.now();
        f(&mut show, now)
    }

    /// Starts every job an idle worker can take.
    pub fn pump(&self) {
        let orders = self.with(|s, now| s.dispatch_all(now));
        for order in orders {
            let me = self.clone();
            self.inner.runtime.spawn_blocking(move || me.work(order));
        }
    }

    fn work(&self, order: WorkOrder) {
        let scale = self.inner.latency_scale;
        let mut observer = |rec: &StageRecord| {
            if scale > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(
                    rec.latency_ms as f64 * scale / 1000.0,
                ));
            }
            self.with(|s, now| {
                if let Err(e) = s.record_stage(&order.job_id, &rec.label, now) {
                    tracing::warn!(job = %order.job_id, stage = %rec.label, "stage stamp refused: {e}");
                }
            });
        };
        let result = order.run(&mut observer);
        let outcome = self.with(|s, now| (s.finish_job(&order.job_id, result, now), now));
        match outcome {
            (Ok(JobOutcome::Retry { retry_at, attempts }), now) => {
                tracing::info!(job = %order.job_id, attempts, "retrying at {retry_at}");
                let me = self.clone();
                let job_id = order.job_id.clone();
                let wait = Duration::from_millis(retry_at.saturating_sub(now));
                self.inner.runtime.spawn(async move {
                    tokio::time::sleep(wait).await;
                    if let Err(e) = me.with(|s, now| s.requeue(&job_id, now)) {
                        tracing::warn!(job = %job_id, "requeue failed: {e}");
                    }
                    me.pump();
                });
            }
            (Ok(JobOutcome::DeadLettered { .. }), _) => {
                tracing::warn!(job = %order.job_id, "dead-lettered, fallback on stage");
            }
            (Ok(JobOutcome::InReview { .. }), _) => {}
            (Err(e), _) => tracing::error!(job = %order.job_id, "finishing failed: {e}"),
        }
        self.pump();
    }

    /// Sweeps overdue review tickets every `every`.
    pub fn start_ticker(&self, every: Duration) -> JoinHandle<()> {
        let me = self.clone();
        self.inner.runtime.spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                if me.lock().is_closed() {
                    break;
                }
                if let Err(e) = me.with(|s, now| s.sweep_timeouts(now)) {
                    tracing::error!("timeout sweep failed: {e}");
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_clock_is_past_2020_and_monotonic() {
        let c = EpochClock::new();
        let a = c.now_ms();
        let b = c.now_ms();
        assert!(a > 1_577_836_800_000);
        assert!(b >= a);
    }
}
