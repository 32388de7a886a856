//! Simulation clocks. Timestamps are microseconds since the session start.
//!
//! Event order is always the arrival order at the exchange; clocks only stamp
//! times and pace the replay feed and agents.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::types::Timestamp;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock running `scale` times faster than real time (`scale >= 1`).
#[derive(Debug, Clone)]
pub struct ScaledClock {
    origin: Instant,
    scale: f64,
}

impl ScaledClock {
    pub fn new(scale: f64) -> ScaledClock {
        assert!(scale >= 1.0, "time scale must be at least 1");
        ScaledClock {
            origin: Instant::now(),
            scale,
        }
    }

    /// Real time, starting now.
    pub fn wall() -> ScaledClock {
        ScaledClock::new(1.0)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Wall-clock instant at which simulation time `t` is reached.
    pub fn instant_at(&self, t: Timestamp) -> Instant {
        self.origin + Duration::from_secs_f64(t as f64 / 1e6 / self.scale)
    }

    /// How long to wait from now until simulation time `t`.
    pub fn wall_delay_until(&self, t: Timestamp) -> Duration {
        self.instant_at(t).saturating_duration_since(Instant::now())
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> Timestamp {
        (self.origin.elapsed().as_secs_f64() * self.scale * 1e6) as Timestamp
    }
}

/// A clock advanced explicitly by a discrete-event driver.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Timestamp) -> ManualClock {
        ManualClock(AtomicU64::new(start))
    }

    /// Move forward to `t`. Time never goes backwards.
    pub fn advance_to(&self, t: Timestamp) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }
}
