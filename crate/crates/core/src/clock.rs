//! Time sources in integer microseconds.
//!
//! Experiments run on [`VirtualClock`], which only moves when the scheduler
//! advances it. [`WallClock`] maps a monotonic host clock onto the same
//! microsecond timeline for live sessions.

use std::time::Instant;

pub trait Clock {
    fn now_us(&self) -> u64;
}

#[derive(Debug, Default, Clone)]
pub struct VirtualClock {
    now_us: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves the clock forward. Moving backwards is a scheduler bug.
    pub fn advance_to(&mut self, t_us: u64) {
        assert!(
            t_us >= self.now_us,
            "virtual clock cannot go backwards: now={} target={}",
            self.now_us,
            t_us
        );
        self.now_us = t_us;
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now_us
    }
}

/// Monotonic wall clock with its epoch at construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    epoch: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn instant_at(&self, t_us: u64) -> Instant {
        self.epoch + std::time::Duration::from_micros(t_us)
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }
}

/// Smallest multiple of `period_us` that is `>= t_us`.
pub fn next_tick(t_us: u64, period_us: u64) -> u64 {
    t_us.div_ceil(period_us) * period_us
}
