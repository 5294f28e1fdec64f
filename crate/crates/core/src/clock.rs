//! Injectable time source. Everything time-driven reads the clock through this
//! trait so tests can run on a manual clock without sleeping.

use std::sync::Arc;

use chrono::{Duration, Utc};
use parking_lot::Mutex;

use crate::types::Timestamp;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

/// A clock that only moves when told to. Cloning shares the same instant.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<Timestamp>>);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn set(&self, t: Timestamp) {
        *self.0.lock() = t;
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn advance_to(&self, t: Timestamp) {
        let mut g = self.0.lock();
        if t > *g {
            *g = t;
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut g = self.0.lock();
        *g += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        *self.0.lock()
    }
}
