//! Actor-side distillation: policy and value losses toward learner targets
//! and the optimizer step over replayed, annotated trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{AgentMemory, AgentNet, ModelError, ParamSet, PopArt};
use crate::rl::{self, RlError};
use crate::tensor::{AdamState, Graph, NodeId, Real, Tensor, TensorError};
use crate::trajectory::{stack_first, stack_obs, stack_rows, Trajectory};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("trajectory {0} has no learner annotation")]
    MissingAnnotation(usize),
    #[error("invalid distill configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T, E = DistillError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha_pi: f64,
    pub alpha_v: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha_pi: 1.0,
            alpha_v: 0.1,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_pi", self.alpha_pi), ("alpha_v", self.alpha_v)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DistillError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `KL(π_A ‖ π_L)` averaged over rows; the learner side is detached.
pub fn policy_distill_loss<S: Real>(g: &mut Graph<S>, actor_logits: NodeId, learner_logits: NodeId) -> Result<NodeId> {
    if g.shape(actor_logits) != g.shape(learner_logits) {
        return Err(DistillError::Mismatch(format!(
            "actor logits {:?} vs learner logits {:?}",
            g.shape(actor_logits),
            g.shape(learner_logits)
        )));
    }
    let target = g.stop_gradient(learner_logits);
    Ok(rl::kl_divergence(g, actor_logits, target)?)
}

/// Mean of `½(V_L − V_A)²`; the learner side is detached.
pub fn value_distill_loss<S: Real>(g: &mut Graph<S>, actor_values: NodeId, learner_values: NodeId) -> Result<NodeId> {
    let target = g.stop_gradient(learner_values);
    let d = g.sub(target, actor_values)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}

/// `α_π·L^π + α_V·L^V`.
pub fn ald_loss<S: Real>(g: &mut Graph<S>, policy: NodeId, value: NodeId, cfg: &DistillConfig) -> Result<NodeId> {
    let a = g.scale(policy, cfg.alpha_pi);
    let b = g.scale(value, cfg.alpha_v);
    Ok(g.add(a, b)?)
}

/// Replayed segments in the layout the actor network consumes.
#[derive(Clone, Debug)]
pub struct DistillBatch<S> {
    pub t: usize,
    pub b: usize,
    /// `[T·B, obs_dim]`, time-major.
    pub obs: Tensor<S>,
    pub first: Vec<bool>,
    pub memories: Vec<AgentMemory<S>>,
    /// `[T·B, A]`
    pub learner_logits: Tensor<S>,
    /// `[T·B]` denormalized.
    pub learner_values: Vec<f64>,
}

impl DistillBatch<f32> {
    pub fn from_trajectories(actor: &AgentNet, batch: &[Trajectory]) -> Result<Self> {
        let t = batch.first().map_or(0, Trajectory::len);
        let mut logits = Vec::with_capacity(batch.len());
        for (i, tr) in batch.iter().enumerate() {
            if tr.len() != t {
                return Err(DistillError::Mismatch("segments of different lengths".into()));
            }
            let ann = tr.annotation.as_ref().ok_or(DistillError::MissingAnnotation(i))?;
            logits.push(ann.logits.as_slice());
        }
        let b = batch.len();
        let mut values = vec![0.0; t * b];
        for (i, tr) in batch.iter().enumerate() {
            let ann = tr.annotation.as_ref().expect("checked above");
            for s in 0..t {
                values[s * b + i] = ann.values[s] as f64;
            }
        }
        let memories = batch
            .iter()
            .map(|tr| actor.memory_from_flat(&tr.actor_state))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DistillBatch {
            t,
            b,
            obs: stack_obs(batch, t),
            first: stack_first(batch, t),
            memories,
            learner_logits: stack_rows(&logits, t, actor.num_actions),
            learner_values: values,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillStats {
    pub policy: f64,
    pub value: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DistillLosses {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
}

/// Builds the distillation loss of `actor` on `batch`. `stats` are the actor's
/// PopArt statistics, used to bring the learner's values into the actor head's
/// normalized space.
pub fn distill_loss<S: Real>(
    g: &mut Graph<S>,
    actor: &AgentNet,
    p: &crate::models::Bound,
    batch: &DistillBatch<S>,
    stats: &PopArt,
    cfg: &DistillConfig,
) -> Result<DistillLosses> {
    let (out, _) = actor.forward(
        g,
        p,
        batch.obs.clone(),
        batch.t,
        batch.b,
        &batch.first,
        &batch.memories,
        batch.t,
    )?;
    let target_logits = g.constant(batch.learner_logits.clone());
    let policy = policy_distill_loss(g, out.logits, target_logits)?;
    let value = match out.value {
        Some(v) => {
            let n = batch.learner_values.len();
            let norm: Vec<f64> = batch.learner_values.iter().map(|&x| stats.normalize(x)).collect();
            let target = g.constant(Tensor::from_f64(&[n, 1], &norm)?);
            value_distill_loss(g, v, target)?
        }
        None if cfg.alpha_v > 0.0 => {
            return Err(DistillError::Mismatch(
                "value distillation needs an actor value head".into(),
            ))
        }
        None => g.constant(Tensor::scalar(S::zero())),
    };
    let total = ald_loss(g, policy, value, cfg)?;
    Ok(DistillLosses { total, policy, value })
}

/// Gradients of the distillation loss with respect to every actor block.
pub fn distill_grads<S: Real>(
    actor: &AgentNet,
    params: &ParamSet<S>,
    batch: &DistillBatch<S>,
    stats: &PopArt,
    cfg: &DistillConfig,
) -> Result<(Vec<Tensor<S>>, DistillStats)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let l = distill_loss(&mut g, actor, &p, batch, stats, cfg)?;
    let st = DistillStats {
        policy: g.value(l.policy).item().f64(),
        value: g.value(l.value).item().f64(),
        total: g.value(l.total).item().f64(),
    };
    let grads = g.backward(l.total)?;
    Ok((p.ids().iter().map(|&id| grads.get(id)).collect(), st))
}

/// One Adam step of the actor on the distillation loss. Updates the actor's
/// PopArt statistics with the learner values first.
pub fn distill_step(
    actor: &AgentNet,
    params: &mut ParamSet<f32>,
    adam: &mut AdamState<f32>,
    batch: &DistillBatch<f32>,
    stats: &mut PopArt,
    cfg: &DistillConfig,
    lr: f64,
) -> Result<DistillStats> {
    if actor.has_value() {
        actor.popart_update(params, stats, &batch.learner_values)?;
    }
    let (grads, st) = distill_grads(actor, params, batch, stats, cfg)?;
    let names: Vec<&str> = params.names().iter().map(String::as_str).collect();
    let deltas = adam.deltas(&grads, lr, &names)?;
    params.apply_deltas(&deltas);
    Ok(st)
}
