//! Learner runner (inference annotations) and learner (RL updates).

use std::collections::HashMap;
use std::sync::Arc;

use crate::models::{AgentMemory, AgentNet, Bound, ParamSet, PopArt};
use crate::rl::{self, RlConfig, Segment};
use crate::tensor::{AdamConfig, AdamState, Graph, NodeId, Real, Tensor};
use crate::trajectory::{stack_first, stack_obs, stack_rows, Annotation, Trajectory};

use super::metrics::LearnerLosses;
use super::param_store::ParamStore;
use super::{PipelineError, Result};

/// Runs the learner model in inference mode over incoming batches, attaching
/// logits, values and the learner memory each trajectory started from.
pub struct LearnerRunner {
    net: AgentNet,
    store: Arc<ParamStore>,
    actor_store: Option<Arc<ParamStore>>,
    memories: HashMap<u32, AgentMemory<f32>>,
    pub staleness_bound: u64,
    pub batches: u64,
    pub stale: u64,
}

impl LearnerRunner {
    pub fn new(
        net: AgentNet,
        store: Arc<ParamStore>,
        actor_store: Option<Arc<ParamStore>>,
        staleness_bound: u64,
    ) -> Self {
        LearnerRunner {
            net,
            store,
            actor_store,
            memories: HashMap::new(),
            staleness_bound,
            batches: 0,
            stale: 0,
        }
    }

    /// Annotates in place; returns how many trajectories exceeded the
    /// staleness bound.
    pub fn annotate(&mut self, batch: &mut [Trajectory]) -> Result<u64> {
        if batch.is_empty() {
            return Ok(0);
        }
        let snap = self.store.snapshot();
        let t = batch[0].len();
        let b = batch.len();
        let a = self.net.num_actions;
        let mems: Vec<AgentMemory<f32>> = batch
            .iter()
            .map(|tr| {
                tr.check().map_err(PipelineError::Config)?;
                if tr.len() != t {
                    return Err(PipelineError::Config(
                        "segments of different lengths in one batch".into(),
                    ));
                }
                Ok(self
                    .memories
                    .get(&tr.actor_id)
                    .cloned()
                    .unwrap_or_else(|| self.net.initial_memory()))
            })
            .collect::<Result<_>>()?;
        let mut g = Graph::new();
        let p = snap.params.bind_frozen(&mut g);
        let obs = stack_obs::<f32>(batch, t + 1);
        let first = stack_first(batch, t + 1);
        // the whole segment (plus the bootstrap step) in one call per batch
        let (out, next) = self.net.forward(&mut g, &p, obs, t + 1, b, &first, &mems, t)?;
        let logits = g.value(out.logits).data();
        let values = out.value.map(|v| g.value(v).data().to_vec());
        let mut stale = 0;
        let actor_version = self.actor_store.as_ref().map(|s| s.version());
        for (i, tr) in batch.iter_mut().enumerate() {
            let mut lg = Vec::with_capacity(t * a);
            let mut vals = Vec::with_capacity(t);
            for s in 0..t {
                let row = s * b + i;
                lg.extend_from_slice(&logits[row * a..(row + 1) * a]);
                vals.push(
                    values
                        .as_ref()
                        .map_or(0.0, |v| snap.popart.denormalize(v[row] as f64) as f32),
                );
            }
            let bootstrap = values
                .as_ref()
                .map_or(0.0, |v| snap.popart.denormalize(v[t * b + i] as f64) as f32);
            if let Some(v) = actor_version {
                if v.saturating_sub(tr.actor_version) > self.staleness_bound {
                    stale += 1;
                }
            }
            tr.annotation = Some(Annotation {
                logits: lg,
                values: vals,
                bootstrap,
                learner_state: self.net.memory_to_flat(&mems[i]),
                learner_version: snap.version,
            });
        }
        for (tr, m) in batch.iter().zip(next) {
            self.memories.insert(tr.actor_id, m);
        }
        self.batches += 1;
        self.stale += stale;
        Ok(stale)
    }
}

/// A learner batch in network layout (time-major, `T + 1` steps of inputs).
#[derive(Clone, Debug)]
pub struct LearnerBatch<S> {
    pub t: usize,
    pub b: usize,
    pub obs: Tensor<S>,
    pub first: Vec<bool>,
    pub memories: Vec<AgentMemory<S>>,
    /// `[T·B]` time-major.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// `[T·B, A]`
    pub behaviour_logits: Tensor<S>,
}

impl LearnerBatch<f32> {
    pub fn from_trajectories(net: &AgentNet, batch: &[Trajectory]) -> Result<Self> {
        let t = batch.first().map_or(0, Trajectory::len);
        let b = batch.len();
        let mut actions = vec![0; t * b];
        let mut rewards = vec![0.0; t * b];
        let mut dones = vec![false; t * b];
        let mut memories = Vec::with_capacity(b);
        for (i, tr) in batch.iter().enumerate() {
            let ann = tr
                .annotation
                .as_ref()
                .ok_or_else(|| PipelineError::Config(format!("trajectory {i} is not annotated")))?;
            memories.push(net.memory_from_flat(&ann.learner_state)?);
            for s in 0..t {
                actions[s * b + i] = tr.actions[s] as usize;
                rewards[s * b + i] = tr.rewards[s] as f64;
                dones[s * b + i] = tr.dones[s];
            }
        }
        let rows: Vec<&[f32]> = batch.iter().map(|tr| tr.behaviour_logits.as_slice()).collect();
        Ok(LearnerBatch {
            t,
            b,
            obs: stack_obs(batch, t + 1),
            first: stack_first(batch, t + 1),
            memories,
            actions,
            rewards,
            dones,
            behaviour_logits: stack_rows(&rows, t, net.num_actions),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LearnerLossNodes {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
    pub kl: NodeId,
}

/// The learner objective on one batch: actor-critic plus `beta_l` times the
/// KL regularizer toward the behaviour (actor) policy. Also returns the
/// denormalized value targets for the PopArt update.
pub fn learner_loss<S: Real>(
    g: &mut Graph<S>,
    net: &AgentNet,
    p: &Bound,
    batch: &LearnerBatch<S>,
    popart: &PopArt,
    cfg: &RlConfig,
    beta_l: f64,
) -> Result<(LearnerLossNodes, Vec<f64>)> {
    let (t, b) = (batch.t, batch.b);
    let n = t * b;
    let (out, _) = net.forward(g, p, batch.obs.clone(), t + 1, b, &batch.first, &batch.memories, t)?;
    let value = out
        .value
        .ok_or_else(|| PipelineError::Config("learner model has no value head".into()))?;
    let logits = g.slice_rows(out.logits, 0, n)?;
    let values = g.slice_rows(value, 0, n)?;
    let a = net.num_actions;

    let v_all: Vec<f64> = g
        .value(value)
        .data()
        .iter()
        .map(|x| popart.denormalize(x.f64()))
        .collect();
    let ratios = if cfg.vtrace {
        let cur: Vec<f32> = g.value(logits).data().iter().map(|x| x.f64() as f32).collect();
        let beh: Vec<f32> = batch.behaviour_logits.data().iter().map(|x| x.f64() as f32).collect();
        Some(rl::importance_ratios(&cur, &beh, &batch.actions, a))
    } else {
        None
    };
    let mut targets = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    for i in 0..b {
        let col = |v: &[f64]| (0..t).map(|s| v[s * b + i]).collect::<Vec<f64>>();
        let rewards = col(&batch.rewards);
        let dones: Vec<bool> = (0..t).map(|s| batch.dones[s * b + i]).collect();
        let vals = col(&v_all);
        let r = ratios.as_ref().map(|r| col(r));
        let tg = rl::compute_targets(
            Segment {
                rewards: &rewards,
                dones: &dones,
                values: &vals,
                bootstrap: v_all[t * b + i],
            },
            r.as_deref(),
            cfg,
        )?;
        for s in 0..t {
            targets[s * b + i] = tg.values[s];
            advantages[s * b + i] = tg.advantages[s];
        }
    }
    let sigma = popart.sigma();
    let norm_targets: Vec<f64> = targets.iter().map(|&x| popart.normalize(x)).collect();
    let norm_adv: Vec<f64> = advantages.iter().map(|&x| x / sigma).collect();
    let ac = rl::actor_critic_loss(g, logits, values, &batch.actions, &norm_targets, &norm_adv, cfg)?;
    let behaviour = g.constant(batch.behaviour_logits.clone());
    let kl = rl::learner_kl_regularizer(g, behaviour, logits)?;
    let scaled = g.scale(kl, beta_l);
    let total = g.add(ac.total, scaled)?;
    Ok((
        LearnerLossNodes {
            total,
            policy: ac.policy,
            value: ac.value,
            entropy: ac.entropy,
            kl,
        },
        targets,
    ))
}

/// Owns the learner parameters; the only writer of the learner model.
pub struct Learner {
    pub net: AgentNet,
    pub params: ParamSet<f32>,
    pub popart: PopArt,
    adam: AdamState<f32>,
    pub rl: RlConfig,
    pub beta_l: f64,
    pub lr: f64,
    pub k_l: u64,
    store: Arc<ParamStore>,
    /// Where acting parameters go when the learner also trains the acting
    /// model (single-model baselines and the asymmetric actor-critic).
    actor_sync: Option<(Arc<ParamStore>, ParamSet<f32>)>,
    pub updates: u64,
    pub agent_steps: u64,
}

impl Learner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: AgentNet,
        params: ParamSet<f32>,
        store: Arc<ParamStore>,
        actor_sync: Option<(Arc<ParamStore>, ParamSet<f32>)>,
        rl: RlConfig,
        beta_l: f64,
        adam: &AdamConfig,
        k_l: u64,
    ) -> Self {
        Learner {
            adam: AdamState::new(params.sizes(), adam),
            lr: adam.lr,
            net,
            params,
            popart: PopArt::default(),
            rl,
            beta_l,
            k_l: k_l.max(1),
            store,
            actor_sync,
            updates: 0,
            agent_steps: 0,
        }
    }

    pub fn step(&mut self, batch: &[Trajectory]) -> Result<LearnerLosses> {
        let lb = LearnerBatch::from_trajectories(&self.net, batch)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (nodes, targets) = learner_loss(&mut g, &self.net, &p, &lb, &self.popart, &self.rl, self.beta_l)?;
        let losses = LearnerLosses {
            total: g.value(nodes.total).item() as f64,
            policy: g.value(nodes.policy).item() as f64,
            value: g.value(nodes.value).item() as f64,
            entropy: g.value(nodes.entropy).item() as f64,
            kl: g.value(nodes.kl).item() as f64,
        };
        if !losses.total.is_finite() {
            return Err(PipelineError::NonFinite(format!(
                "learner loss {losses:?} at update {}; batch actors {:?}, seqs {:?}, rewards {:?}",
                self.updates,
                batch.iter().map(|t| t.actor_id).collect::<Vec<_>>(),
                batch.iter().map(|t| t.seq).collect::<Vec<_>>(),
                batch.iter().map(|t| &t.rewards).collect::<Vec<_>>(),
            )));
        }
        let grads = g.backward(nodes.total)?;
        let grads: Vec<Tensor<f32>> = p.ids().iter().map(|&id| grads.get(id)).collect();
        drop(g);
        let names: Vec<&str> = self.params.names().iter().map(String::as_str).collect();
        let deltas = self.adam.deltas(&grads, self.lr, &names)?;
        self.params.apply_deltas(&deltas);
        self.net.popart_update(&mut self.params, &mut self.popart, &targets)?;
        self.updates += 1;
        self.agent_steps += (lb.t * lb.b) as u64;
        if self.updates.is_multiple_of(self.k_l) {
            self.publish();
        }
        Ok(losses)
    }

    /// Makes the current parameters the target (and acting) parameters.
    pub fn publish(&mut self) {
        self.store.publish(self.params.clone(), self.popart);
        if let Some((store, template)) = self.actor_sync.as_mut() {
            template
                .copy_matching(&self.params)
                .expect("acting model is a sub-model of the learner");
            store.write_live(template);
            store.publish(template.clone(), self.popart);
        }
    }
}
