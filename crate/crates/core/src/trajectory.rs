//! Fixed-length experience segments produced by actors.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

/// Targets attached by the learner runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// `[T, A]` learner logits.
    pub logits: Vec<f32>,
    /// `[T]` denormalized learner values.
    pub values: Vec<f32>,
    pub bootstrap: f32,
    /// Learner memory at the segment start, flat.
    pub learner_state: Vec<f32>,
    pub learner_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actor_id: u32,
    /// Per-actor sequence number.
    pub seq: u64,
    /// Version of the actor parameters that produced the behaviour.
    pub actor_version: u64,
    pub obs_dim: usize,
    pub num_actions: usize,
    /// `T + 1` observations, the last one only bootstraps.
    pub observations: Vec<f32>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    /// Step 0 begins a new episode.
    pub first: bool,
    /// `[T, A]` logits the actions were sampled from.
    pub behaviour_logits: Vec<f32>,
    /// Actor memory at the segment start, flat.
    pub actor_state: Vec<f32>,
    pub annotation: Option<Annotation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Episode-start flags for the `T + 1` observations.
    pub fn first_flags(&self) -> Vec<bool> {
        let mut f = Vec::with_capacity(self.len() + 1);
        f.push(self.first);
        f.extend_from_slice(&self.dones);
        f
    }

    pub fn actions_usize(&self) -> Vec<usize> {
        self.actions.iter().map(|&a| a as usize).collect()
    }

    /// Structural consistency of the array lengths.
    pub fn check(&self) -> Result<(), String> {
        let t = self.len();
        let checks = [
            ("observations", self.observations.len(), (t + 1) * self.obs_dim),
            ("rewards", self.rewards.len(), t),
            ("dones", self.dones.len(), t),
            ("behaviour_logits", self.behaviour_logits.len(), t * self.num_actions),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("{name} has {got} values, expected {want}"));
            }
        }
        if self.actions.iter().any(|&a| a as usize >= self.num_actions) {
            return Err("action out of range".into());
        }
        if let Some(a) = &self.annotation {
            if a.logits.len() != t * self.num_actions || a.values.len() != t {
                return Err("annotation does not match the segment".into());
            }
        }
        Ok(())
    }
}

/// Time-major stacking of `steps` observations of every trajectory:
/// row `s·B + i` is step `s` of trajectory `i`.
pub fn stack_obs<S: Real>(batch: &[Trajectory], steps: usize) -> Tensor<S> {
    let b = batch.len();
    let d = batch.first().map_or(0, |t| t.obs_dim);
    let mut data = vec![S::zero(); steps * b * d];
    for (i, tr) in batch.iter().enumerate() {
        for s in 0..steps {
            let src = &tr.observations[s * d..(s + 1) * d];
            let dst = &mut data[(s * b + i) * d..(s * b + i + 1) * d];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = S::of(x as f64);
            }
        }
    }
    Tensor::new(&[steps * b, d], data).expect("consistent batch")
}

/// Time-major episode-start flags for `steps` steps.
pub fn stack_first(batch: &[Trajectory], steps: usize) -> Vec<bool> {
    let flags: Vec<Vec<bool>> = batch.iter().map(Trajectory::first_flags).collect();
    let b = batch.len();
    let mut out = vec![false; steps * b];
    for (i, f) in flags.iter().enumerate() {
        for s in 0..steps {
            out[s * b + i] = f[s];
        }
    }
    out
}

/// Time-major `[T·B, A]` stacking of per-trajectory `[T, A]` rows.
pub fn stack_rows<S: Real>(rows: &[&[f32]], t: usize, width: usize) -> Tensor<S> {
    let b = rows.len();
    let mut data = vec![S::zero(); t * b * width];
    for (i, r) in rows.iter().enumerate() {
        for s in 0..t {
            for k in 0..width {
                data[(s * b + i) * width + k] = S::of(r[s * width + k] as f64);
            }
        }
    }
    Tensor::new(&[t * b, width], data).expect("consistent rows")
}
