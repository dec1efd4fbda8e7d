//! Actors: step an environment with the actor policy and cut the stream into
//! fixed-length trajectories.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::models::{AgentMemory, AgentNet};
use crate::tensor::{kernels, Graph, Tensor};
use crate::trajectory::Trajectory;

use super::metrics::EpisodeRecord;
use super::param_store::{ParamStore, Snapshot};
use super::{PipelineError, Result};

/// Anything that can choose actions for an actor.
pub trait ActorPolicy: Send {
    /// Called at every segment boundary (parameter refresh point).
    fn begin_segment(&mut self) {}

    /// Flat recurrent state at the current point.
    fn state(&self) -> Vec<f32>;

    /// Version of the parameters in use.
    fn version(&self) -> u64 {
        0
    }

    /// Action logits for `obs`. `first` marks the first step of an episode.
    /// The environment is passed for scripted policies; learned policies must
    /// only read `obs`.
    fn act(&mut self, env: &Env, obs: &[f32], first: bool) -> Result<Vec<f32>>;
}

/// The actor network reading published parameters.
pub struct NetPolicy {
    net: AgentNet,
    store: Arc<ParamStore>,
    snapshot: Snapshot,
    memory: AgentMemory<f32>,
    /// Forward calls made with a transformer acting model; stays zero
    /// whenever only a small recurrent model acts.
    pub transformer_calls: u64,
    is_transformer: bool,
}

impl NetPolicy {
    pub fn new(net: AgentNet, store: Arc<ParamStore>) -> Self {
        let snapshot = store.snapshot();
        let memory = net.initial_memory();
        let is_transformer = net.uses_transformer();
        NetPolicy {
            net,
            store,
            snapshot,
            memory,
            transformer_calls: 0,
            is_transformer,
        }
    }

    pub fn net(&self) -> &AgentNet {
        &self.net
    }
}

impl ActorPolicy for NetPolicy {
    fn begin_segment(&mut self) {
        if self.store.version() != self.snapshot.version {
            self.snapshot = self.store.snapshot();
        }
    }

    fn state(&self) -> Vec<f32> {
        self.net.memory_to_flat(&self.memory)
    }

    fn version(&self) -> u64 {
        self.snapshot.version
    }

    fn act(&mut self, _env: &Env, obs: &[f32], first: bool) -> Result<Vec<f32>> {
        if self.is_transformer {
            self.transformer_calls += 1;
        }
        let mut g = Graph::new();
        let p = self.snapshot.params.bind_frozen(&mut g);
        let x = Tensor::new(&[1, obs.len()], obs.to_vec())?;
        let (out, mut next) = self
            .net
            .forward(&mut g, &p, x, 1, 1, &[first], std::slice::from_ref(&self.memory), 1)?;
        self.memory = next.pop().expect("one sequence");
        Ok(g.value(out.logits).data().to_vec())
    }
}

pub fn sample_action(logits: &[f32], rng: &mut impl Rng, greedy: bool) -> usize {
    if greedy {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let x: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
    let mut p = vec![0.0; x.len()];
    kernels::softmax_row(&x, &mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub struct Actor<P> {
    pub id: u32,
    pub env: Env,
    pub policy: P,
    pub t_u: usize,
    pub greedy: bool,
    rng: ChaCha8Rng,
    obs: Vec<f32>,
    first: bool,
    seq: u64,
    steps: u64,
    ep_return: f64,
    ep_len: u64,
}

impl<P: ActorPolicy> Actor<P> {
    pub fn new(id: u32, mut env: Env, policy: P, t_u: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = env.reset(rng.gen());
        Actor {
            id,
            env,
            policy,
            t_u,
            greedy: false,
            rng,
            obs,
            first: true,
            seq: 0,
            steps: 0,
            ep_return: 0.0,
            ep_len: 0,
        }
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Runs `t_u` environment steps; returns the trajectory and the episodes
    /// that ended inside it.
    pub fn unroll(&mut self) -> Result<(Trajectory, Vec<EpisodeRecord>)> {
        self.policy.begin_segment();
        let obs_dim = self.env.obs_dim();
        let num_actions = self.env.num_actions();
        let mut tr = Trajectory {
            actor_id: self.id,
            seq: self.seq,
            actor_version: self.policy.version(),
            obs_dim,
            num_actions,
            observations: Vec::with_capacity((self.t_u + 1) * obs_dim),
            actions: Vec::with_capacity(self.t_u),
            rewards: Vec::with_capacity(self.t_u),
            dones: Vec::with_capacity(self.t_u),
            first: self.first,
            behaviour_logits: Vec::with_capacity(self.t_u * num_actions),
            actor_state: self.policy.state(),
            annotation: None,
        };
        self.seq += 1;
        let mut episodes = Vec::new();
        for _ in 0..self.t_u {
            let logits = self.policy.act(&self.env, &self.obs, self.first)?;
            if logits.len() != num_actions || logits.iter().any(|l| !l.is_finite()) {
                return Err(PipelineError::NonFinite(format!(
                    "actor {} produced logits {logits:?}",
                    self.id
                )));
            }
            let a = sample_action(&logits, &mut self.rng, self.greedy);
            let step = self.env.step(a)?;
            tr.observations.extend_from_slice(&self.obs);
            tr.actions.push(a as u32);
            tr.rewards.push(step.reward as f32);
            tr.dones.push(step.done);
            tr.behaviour_logits.extend_from_slice(&logits);
            self.steps += 1;
            self.ep_return += step.reward;
            self.ep_len += 1;
            if step.done {
                episodes.push(EpisodeRecord {
                    actor: self.id,
                    actor_steps: self.steps,
                    ret: self.ep_return,
                    terminal_reward: step.reward,
                    length: self.ep_len,
                });
                self.ep_return = 0.0;
                self.ep_len = 0;
                self.obs = self.env.reset(self.rng.gen());
            } else {
                self.obs = step.obs;
            }
            self.first = step.done;
        }
        tr.observations.extend_from_slice(&self.obs);
        Ok((tr, episodes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_action(&[0.1, 3.0, -1.0], &mut rng, true), 1);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = [0.0f32, (3.0f32).ln()];
        let n = 20_000;
        let ones = (0..n).filter(|_| sample_action(&logits, &mut rng, false) == 1).count();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 0.015);
    }
}
