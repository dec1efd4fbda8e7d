//! Distillation-per-RL-step accounting and fixed-ratio gating.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DprlMode {
    /// Both sides run as fast as they can; the ratio is only measured.
    Free,
    /// `r` distill agent steps per learner agent step.
    Fixed(f64),
}

/// Shared counters of distill and learner agent steps.
///
/// In fixed-ratio mode with ratio `r` and batch agent steps `n`, the learner
/// may step while `r·L ≤ D` and the distill side while `D < r·(L + n)`, which
/// keeps `D` within one learner batch of `r·L`.
#[derive(Debug)]
pub struct Dprl {
    mode: DprlMode,
    batch_steps: u64,
    distill: AtomicU64,
    learner: AtomicU64,
    lock: Mutex<()>,
    changed: Condvar,
}

impl Dprl {
    pub fn new(mode: DprlMode, batch_steps: u64) -> Self {
        Dprl {
            mode,
            batch_steps,
            distill: AtomicU64::new(0),
            learner: AtomicU64::new(0),
            lock: Mutex::new(()),
            changed: Condvar::new(),
        }
    }

    pub fn mode(&self) -> DprlMode {
        self.mode
    }

    pub fn distill_steps(&self) -> u64 {
        self.distill.load(Ordering::Acquire)
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner.load(Ordering::Acquire)
    }

    pub fn ratio(&self) -> Option<f64> {
        let l = self.learner_steps();
        (l > 0).then(|| self.distill_steps() as f64 / l as f64)
    }

    pub fn distill_may_run(&self) -> bool {
        match self.mode {
            DprlMode::Free => true,
            DprlMode::Fixed(r) => (self.distill_steps() as f64) < r * (self.learner_steps() + self.batch_steps) as f64,
        }
    }

    pub fn learner_may_run(&self) -> bool {
        match self.mode {
            DprlMode::Free => true,
            DprlMode::Fixed(r) => r * self.learner_steps() as f64 <= self.distill_steps() as f64,
        }
    }

    fn wait(&self, ok: impl Fn(&Self) -> bool, stop: &AtomicBool) -> bool {
        let mut g = self.lock.lock();
        loop {
            if stop.load(Ordering::Acquire) {
                return false;
            }
            if ok(self) {
                return true;
            }
            self.changed.wait_for(&mut g, Duration::from_millis(20));
        }
    }

    /// Blocks until a distill step is allowed; `false` once stopped.
    pub fn wait_distill(&self, stop: &AtomicBool) -> bool {
        self.wait(Self::distill_may_run, stop)
    }

    pub fn wait_learner(&self, stop: &AtomicBool) -> bool {
        self.wait(Self::learner_may_run, stop)
    }

    pub fn record_distill(&self, agent_steps: u64) {
        self.distill.fetch_add(agent_steps, Ordering::AcqRel);
        let _g = self.lock.lock();
        self.changed.notify_all();
    }

    pub fn record_learner(&self, agent_steps: u64) {
        self.learner.fetch_add(agent_steps, Ordering::AcqRel);
        let _g = self.lock.lock();
        self.changed.notify_all();
    }

    pub fn wake_all(&self) {
        let _g = self.lock.lock();
        self.changed.notify_all();
    }
}
