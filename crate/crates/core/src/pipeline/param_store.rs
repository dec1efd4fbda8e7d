//! Versioned parameter storage shared between roles.
//!
//! Two views: a published snapshot (consistent, swapped atomically behind a
//! lock) and a live element-atomic copy that HOGWILD workers update without
//! locks. Every scalar is an `AtomicU32` holding `f32` bits, so a reader can
//! see blocks from different versions but never a torn value.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::models::{ParamSet, PopArt};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub version: u64,
    pub params: Arc<ParamSet<f32>>,
    pub popart: PopArt,
}

#[derive(Debug)]
pub struct ParamStore {
    template: ParamSet<f32>,
    live: Vec<Box<[AtomicU32]>>,
    published: RwLock<Snapshot>,
    version: AtomicU64,
    writes: AtomicU64,
}

fn to_atomic(t: &Tensor<f32>) -> Box<[AtomicU32]> {
    t.data().iter().map(|x| AtomicU32::new(x.to_bits())).collect()
}

impl ParamStore {
    pub fn new(params: &ParamSet<f32>, popart: PopArt) -> Self {
        ParamStore {
            live: params.iter().map(|(_, t)| to_atomic(t)).collect(),
            template: params.clone(),
            published: RwLock::new(Snapshot {
                version: 0,
                params: Arc::new(params.clone()),
                popart,
            }),
            version: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        }
    }

    pub fn names(&self) -> &[String] {
        self.template.names()
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    /// Number of write operations (live updates and publications).
    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.published.read().clone()
    }

    /// Element-wise read of the live view.
    pub fn read_live(&self) -> ParamSet<f32> {
        let mut out = self.template.clone();
        for (i, block) in self.live.iter().enumerate() {
            let dst = out.get_mut(i).data_mut();
            for (d, a) in dst.iter_mut().zip(block.iter()) {
                *d = f32::from_bits(a.load(Ordering::Relaxed));
            }
        }
        out
    }

    pub fn read_block(&self, i: usize) -> Vec<f32> {
        self.live[i]
            .iter()
            .map(|a| f32::from_bits(a.load(Ordering::Relaxed)))
            .collect()
    }

    pub fn write_block(&self, i: usize, values: &[f32]) {
        for (a, v) in self.live[i].iter().zip(values) {
            a.store(v.to_bits(), Ordering::Relaxed);
        }
        self.writes.fetch_add(1, Ordering::Relaxed);
    }

    /// Overwrites the whole live view (not atomic as a whole).
    pub fn write_live(&self, params: &ParamSet<f32>) {
        for (block, (_, t)) in self.live.iter().zip(params.iter()) {
            for (a, v) in block.iter().zip(t.data()) {
                a.store(v.to_bits(), Ordering::Relaxed);
            }
        }
        self.writes.fetch_add(1, Ordering::Relaxed);
    }

    /// Lock-free `live += deltas`, each element by compare-and-swap.
    pub fn add_deltas(&self, deltas: &[Vec<f32>]) {
        for (block, d) in self.live.iter().zip(deltas) {
            for (a, &dx) in block.iter().zip(d) {
                if dx == 0.0 {
                    continue;
                }
                let _ = a.fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
                    Some((f32::from_bits(bits) + dx).to_bits())
                });
            }
        }
        self.writes.fetch_add(1, Ordering::Relaxed);
    }

    /// Publishes `params` as the new snapshot; returns its version.
    pub fn publish(&self, params: ParamSet<f32>, popart: PopArt) -> u64 {
        let mut guard = self.published.write();
        let version = guard.version + 1;
        *guard = Snapshot {
            version,
            params: Arc::new(params),
            popart,
        };
        self.version.store(version, Ordering::Release);
        self.writes.fetch_add(1, Ordering::Relaxed);
        version
    }

    /// Publishes the current live view.
    pub fn publish_live(&self, popart: PopArt) -> u64 {
        self.publish(self.read_live(), popart)
    }
}
