//! Bounded FIFO replay of annotated batches with uniform sampling.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::Rng;

use crate::trajectory::Trajectory;

pub type Batch = Arc<Vec<Trajectory>>;

#[derive(Debug, Default)]
struct Inner {
    items: VecDeque<Batch>,
    pushed: u64,
    evicted: u64,
}

#[derive(Debug)]
pub struct Replay {
    capacity: usize,
    inner: Mutex<Inner>,
    ready: Condvar,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayCounts {
    pub len: usize,
    pub pushed: u64,
    pub evicted: u64,
}

impl Replay {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Replay {
            capacity,
            inner: Mutex::new(Inner::default()),
            ready: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&self, batch: Batch) {
        let mut g = self.inner.lock();
        if g.items.len() == self.capacity {
            g.items.pop_front();
            g.evicted += 1;
        }
        g.items.push_back(batch);
        g.pushed += 1;
        drop(g);
        self.ready.notify_all();
    }

    pub fn counts(&self) -> ReplayCounts {
        let g = self.inner.lock();
        ReplayCounts {
            len: g.items.len(),
            pushed: g.pushed,
            evicted: g.evicted,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform sample with replacement; `None` when empty.
    pub fn try_sample(&self, rng: &mut impl Rng) -> Option<Batch> {
        let g = self.inner.lock();
        if g.items.is_empty() {
            return None;
        }
        let i = rng.gen_range(0..g.items.len());
        Some(Arc::clone(&g.items[i]))
    }

    /// Blocks until an element is available or `stop` is raised.
    pub fn sample(&self, rng: &mut impl Rng, stop: &AtomicBool) -> Option<Batch> {
        let mut g = self.inner.lock();
        loop {
            if !g.items.is_empty() {
                let i = rng.gen_range(0..g.items.len());
                return Some(Arc::clone(&g.items[i]));
            }
            if stop.load(Ordering::Acquire) {
                return None;
            }
            self.ready.wait_for(&mut g, Duration::from_millis(20));
        }
    }

    /// Wakes blocked samplers so they can observe a stop flag.
    pub fn wake_all(&self) {
        self.ready.notify_all();
    }

    pub fn contents(&self) -> Vec<Batch> {
        self.inner.lock().items.iter().cloned().collect()
    }
}
