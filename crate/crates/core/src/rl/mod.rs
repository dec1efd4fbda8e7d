//! Learner-side RL objective: targets, actor-critic loss and the KL
//! regularizer pulling the learner policy toward the actor policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{kernels, Graph, NodeId, Real, TensorError};

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid RL configuration: {0}")]
    Config(String),
    #[error("importance weighting is enabled but behaviour logits are missing")]
    MissingBehaviour,
    #[error("segment arrays disagree: {0}")]
    Length(String),
}

pub type Result<T, E = RlError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Truncated importance weighting of targets and advantages.
    pub vtrace: bool,
    pub rho_bar: f64,
    pub c_bar: f64,
    /// Weight of the learner→actor KL regularizer.
    pub beta_l: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 1.0,
            vtrace: false,
            rho_bar: 1.0,
            c_bar: 1.0,
            beta_l: 0.1,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [
            ("rho_bar", self.rho_bar),
            ("c_bar", self.c_bar),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("beta_l", self.beta_l),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RlError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One segment of experience in value space. `dones[t]` marks `r[t]` as the
/// last reward of its episode.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    pub rewards: &'a [f64],
    pub dones: &'a [bool],
    pub values: &'a [f64],
    pub bootstrap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Value targets and advantages. With `cfg.vtrace`, `ratios[t]` must hold
/// `π_L(a_t|s_t) / π_A(a_t|s_t)`; otherwise they are ignored and plain n-step
/// bootstrapped returns are produced.
pub fn compute_targets(seg: Segment<'_>, ratios: Option<&[f64]>, cfg: &RlConfig) -> Result<Targets> {
    let t_len = seg.rewards.len();
    if seg.dones.len() != t_len || seg.values.len() != t_len {
        return Err(RlError::Length(format!(
            "rewards {}, dones {}, values {}",
            t_len,
            seg.dones.len(),
            seg.values.len()
        )));
    }
    let discount = |t: usize| if seg.dones[t] { 0.0 } else { cfg.gamma };
    let mut values = vec![0.0; t_len];
    let mut advantages = vec![0.0; t_len];
    if !cfg.vtrace {
        let mut next = seg.bootstrap;
        for t in (0..t_len).rev() {
            let g = seg.rewards[t] + discount(t) * next;
            values[t] = g;
            advantages[t] = g - seg.values[t];
            next = g;
        }
        return Ok(Targets { values, advantages });
    }
    let ratios = ratios.ok_or(RlError::MissingBehaviour)?;
    if ratios.len() != t_len {
        return Err(RlError::Length(format!("ratios {} for {} steps", ratios.len(), t_len)));
    }
    // v_t = (1-ρ)V_t + ρ r_t + γ_t[(ρ-c)V_{t+1} + c v_{t+1}] is the usual
    // V-trace recursion regrouped so that ρ = c = 1 gives r_t + γ_t v_{t+1}
    // exactly, i.e. the n-step return bit for bit.
    let mut next_v = seg.bootstrap;
    let mut next_vs = seg.bootstrap;
    for t in (0..t_len).rev() {
        let rho = ratios[t].min(cfg.rho_bar);
        let c = ratios[t].min(cfg.c_bar);
        let gt = discount(t);
        let vs = (1.0 - rho) * seg.values[t] + rho * seg.rewards[t] + gt * ((rho - c) * next_v + c * next_vs);
        advantages[t] = rho * ((seg.rewards[t] + gt * next_vs) - seg.values[t]);
        values[t] = vs;
        next_v = seg.values[t];
        next_vs = vs;
    }
    Ok(Targets { values, advantages })
}

/// `π_L(a|s)/π_A(a|s)` per step from row-major logits `[T, A]`.
pub fn importance_ratios(
    learner_logits: &[f32],
    behaviour_logits: &[f32],
    actions: &[usize],
    num_actions: usize,
) -> Vec<f64> {
    let mut lp = vec![0.0f64; num_actions];
    let mut bp = vec![0.0f64; num_actions];
    actions
        .iter()
        .enumerate()
        .map(|(t, &a)| {
            let row = t * num_actions..(t + 1) * num_actions;
            let l: Vec<f64> = learner_logits[row.clone()].iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = behaviour_logits[row].iter().map(|&x| x as f64).collect();
            kernels::log_softmax_row(&l, &mut lp);
            kernels::log_softmax_row(&b, &mut bp);
            (lp[a] - bp[a]).exp()
        })
        .collect()
}

/// Mean over rows of `KL(softmax(p) ‖ softmax(q))`, computed from
/// log-probabilities.
pub fn kl_divergence<S: Real>(g: &mut Graph<S>, p: NodeId, q: NodeId) -> Result<NodeId> {
    if g.shape(p) != g.shape(q) {
        return Err(TensorError::Shape {
            op: "kl_divergence",
            shapes: vec![g.shape(p).to_vec(), g.shape(q).to_vec()],
        }
        .into());
    }
    let rows = g.value(p).rows().max(1);
    let lp = g.log_softmax(p);
    let lq = g.log_softmax(q);
    let pp = g.exp(lp);
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(pp, diff)?;
    let total = g.sum(terms);
    Ok(g.scale(total, 1.0 / rows as f64))
}

/// Mean entropy of the row-wise categorical distributions.
pub fn entropy<S: Real>(g: &mut Graph<S>, logits: NodeId) -> NodeId {
    let rows = g.value(logits).rows().max(1);
    let lp = g.log_softmax(logits);
    let p = g.exp(lp);
    let plogp = g.mul(p, lp).expect("same shape");
    let s = g.sum(plogp);
    g.scale(s, -1.0 / rows as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct AcLoss {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
}

/// Advantage actor-critic loss. `values` are `[N,1]` in normalized space and
/// `targets` must already be normalized with the same statistics;
/// `advantages` enter as constants.
pub fn actor_critic_loss<S: Real>(
    g: &mut Graph<S>,
    logits: NodeId,
    values: NodeId,
    actions: &[usize],
    targets: &[f64],
    advantages: &[f64],
    cfg: &RlConfig,
) -> Result<AcLoss> {
    let n = actions.len();
    if targets.len() != n || advantages.len() != n || g.value(values).numel() != n {
        return Err(RlError::Length(format!(
            "actions {n}, targets {}, advantages {}, values {}",
            targets.len(),
            advantages.len(),
            g.value(values).numel()
        )));
    }
    let lp = g.log_softmax(logits);
    let picked = g.pick(lp, actions)?;
    let adv = g.constant(crate::tensor::Tensor::from_f64(&[n], advantages)?);
    let weighted = g.mul(picked, adv)?;
    let pg = g.mean(weighted);
    let policy = g.scale(pg, -1.0);

    let v = g.reshape(values, &[n])?;
    let tgt = g.constant(crate::tensor::Tensor::from_f64(&[n], targets)?);
    let err = g.sub(tgt, v)?;
    let sq = g.square(err);
    let msq = g.mean(sq);
    let value = g.scale(msq, 0.5);

    let ent = entropy(g, logits);

    let a = g.scale(value, cfg.value_coef);
    let b = g.scale(ent, -cfg.entropy_coef);
    let pv = g.add(policy, a)?;
    let total = g.add(pv, b)?;
    Ok(AcLoss {
        total,
        policy,
        value,
        entropy: ent,
    })
}

/// `KL(π_A ‖ π_L)` with the actor side detached, so only the learner logits
/// receive gradient.
pub fn learner_kl_regularizer<S: Real>(g: &mut Graph<S>, behaviour: NodeId, learner: NodeId) -> Result<NodeId> {
    let target = g.stop_gradient(behaviour);
    kl_divergence(g, target, learner)
}
