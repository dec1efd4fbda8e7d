//! HOGWILD distill workers sharing the actor parameter store.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::distill::{distill_grads, DistillBatch, DistillConfig, DistillStats};
use crate::models::{AgentNet, PopArt};
use crate::tensor::{AdamConfig, AdamState};
use crate::trajectory::Trajectory;

use super::param_store::ParamStore;
use super::Result;

/// State shared by all distill workers.
#[derive(Debug)]
pub struct DistillShared {
    pub store: Arc<ParamStore>,
    pub popart: Mutex<PopArt>,
    /// Aggregate optimizer steps across workers.
    pub steps: AtomicU64,
    pub k_a: u64,
}

impl DistillShared {
    pub fn new(store: Arc<ParamStore>, k_a: u64) -> Self {
        DistillShared {
            store,
            popart: Mutex::new(PopArt::default()),
            steps: AtomicU64::new(0),
            k_a: k_a.max(1),
        }
    }
}

pub struct DistillWorker {
    pub id: usize,
    net: AgentNet,
    adam: AdamState<f32>,
    names: Vec<String>,
    pub cfg: DistillConfig,
    pub lr: f64,
}

impl DistillWorker {
    pub fn new(id: usize, net: AgentNet, shared: &DistillShared, cfg: DistillConfig, adam: &AdamConfig) -> Self {
        let params = shared.store.read_live();
        DistillWorker {
            id,
            net,
            adam: AdamState::new(params.sizes(), adam),
            names: params.names().to_vec(),
            cfg,
            lr: adam.lr,
        }
    }

    /// One lock-free distillation step against the live actor parameters.
    pub fn step(&mut self, shared: &DistillShared, batch: &[Trajectory]) -> Result<DistillStats> {
        let db = DistillBatch::from_trajectories(&self.net, batch)?;
        let stats = {
            let mut popart = shared.popart.lock();
            if let Some((wi, bi)) = self.net.value_head() {
                let mut w = shared.store.read_block(wi);
                let mut b = shared.store.read_block(bi);
                popart.update(&mut w, &mut b[0], &db.learner_values)?;
                shared.store.write_block(wi, &w);
                shared.store.write_block(bi, &b);
            }
            *popart
        };
        let params = shared.store.read_live();
        let (grads, st) = distill_grads(&self.net, &params, &db, &stats, &self.cfg)?;
        let names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        let deltas = self.adam.deltas(&grads, self.lr, &names)?;
        shared.store.add_deltas(&deltas);
        let n = shared.steps.fetch_add(1, Ordering::AcqRel) + 1;
        if n.is_multiple_of(shared.k_a) {
            shared.store.publish_live(stats);
        }
        Ok(st)
    }
}
