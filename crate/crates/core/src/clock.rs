//! Time sources. Every timestamp in the system is integer milliseconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub type Millis = u64;

pub fn millis(d: Duration) -> Millis {
    d.as_millis() as Millis
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
}

/// Wall clock, milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(millis)
            .unwrap_or(0)
    }
}

/// Deterministic clock advanced explicitly by a simulation driver.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new(start: Millis) -> Self {
        Self {
            now: Arc::new(AtomicU64::new(start)),
        }
    }

    pub fn advance(&self, by: Millis) -> Millis {
        self.now.fetch_add(by, Ordering::AcqRel) + by
    }

    pub fn set(&self, to: Millis) {
        self.now.store(to, Ordering::Release);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> Millis {
        self.now.load(Ordering::Acquire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_advances() {
        let clock = VirtualClock::new(100);
        assert_eq!(clock.now_ms(), 100);
        assert_eq!(clock.advance(250), 350);
        let shared = clock.clone();
        shared.advance(50);
        assert_eq!(clock.now_ms(), 400);
    }
}
