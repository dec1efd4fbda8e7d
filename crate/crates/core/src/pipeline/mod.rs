//! The actor / queue / learner-runner / learner / replay / distill pipeline.
//!
//! Roles talk over bounded channels and share nothing mutable except the
//! two [`ParamStore`]s. [`runtime::run_threaded`] runs every role on its own
//! thread; [`runtime::run_deterministic`] runs the same roles round-robin on
//! the calling thread for reproducible tests.

pub mod actor;
pub mod distiller;
pub mod dprl;
pub mod learner;
pub mod metrics;
pub mod param_store;
pub mod replay;
pub mod runtime;
pub mod transport;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistillError;
use crate::envs::{EnvConfig, EnvError};
use crate::models::{AgentNet, CoreConfig, ModelError, ParamSet, TowerConfig};
use crate::rl::RlError;
use crate::tensor::TensorError;
use crate::trajectory::Trajectory;

pub use dprl::{Dprl, DprlMode};
pub use param_store::{ParamStore, Snapshot};
pub use replay::Replay;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("a pipeline role stopped unexpectedly: {0}")]
    Role(String),
}

impl PipelineError {
    /// Numeric failures (as opposed to configuration or I/O problems).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::NonFinite(_)
                | PipelineError::Tensor(TensorError::NonFiniteGradient { .. })
                | PipelineError::Distill(DistillError::Tensor(TensorError::NonFiniteGradient { .. }))
        )
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Small LSTM acts and is distilled from a transformer learner.
    Ald,
    /// Standalone LSTM trained by RL.
    Lstm,
    /// Standalone transformer trained by RL (and acting).
    Gtrxl,
    /// LSTM policy with a separate transformer value network.
    AsymmAc,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ald" => Ok(Mode::Ald),
            "lstm" => Ok(Mode::Lstm),
            "gtrxl" => Ok(Mode::Gtrxl),
            "asymm-ac" => Ok(Mode::AsymmAc),
            other => Err(format!("unknown mode `{other}` (ald, lstm, gtrxl, asymm-ac)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ald => "ald",
            Mode::Lstm => "lstm",
            Mode::Gtrxl => "gtrxl",
            Mode::AsymmAc => "asymm-ac",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub actors: usize,
    pub distillers: usize,
    pub batch: usize,
    pub unroll: usize,
    pub k_l: u64,
    pub k_a: u64,
    /// In batches.
    pub replay_capacity: usize,
    /// In batches.
    pub channel_depth: usize,
    pub dprl: DprlMode,
    /// Annotations whose actor parameters lag the published version by more
    /// than this many versions are counted as stale.
    pub staleness_bound: u64,
    /// Informational acting-latency budget in milliseconds.
    pub actor_budget_ms: Option<f64>,
    /// Let the learner take an extra step on a replayed batch per fresh batch.
    pub learner_replay: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            actors: 4,
            distillers: 2,
            batch: 8,
            unroll: 20,
            k_l: 1,
            k_a: 1,
            replay_capacity: 128,
            channel_depth: 4,
            dprl: DprlMode::Free,
            staleness_bound: 100,
            actor_budget_ms: None,
            learner_replay: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("actors", self.actors),
            ("batch", self.batch),
            ("unroll", self.unroll),
            ("replay_capacity", self.replay_capacity),
            ("channel_depth", self.channel_depth),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PipelineError::Config(format!("pipeline.{name} must be >= 1")));
            }
        }
        if self.k_l == 0 || self.k_a == 0 {
            return Err(PipelineError::Config(
                "pipeline.k_l and pipeline.k_a must be >= 1".into(),
            ));
        }
        if let DprlMode::Fixed(r) = self.dprl {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(PipelineError::Config(format!("fixed DpRL ratio must be >= 1, got {r}")));
            }
        }
        Ok(())
    }

    pub fn batch_agent_steps(&self) -> u64 {
        (self.batch * self.unroll) as u64
    }
}

/// Accumulates trajectories into batches of exactly `size`, in arrival order.
#[derive(Debug)]
pub struct Batcher {
    size: usize,
    pending: Vec<Trajectory>,
    pub received: u64,
    pub batches: u64,
}

impl Batcher {
    pub fn new(size: usize) -> Self {
        Batcher {
            size,
            pending: Vec::with_capacity(size),
            received: 0,
            batches: 0,
        }
    }

    pub fn push(&mut self, tr: Trajectory) -> Option<Vec<Trajectory>> {
        self.received += 1;
        self.pending.push(tr);
        if self.pending.len() == self.size {
            self.batches += 1;
            Some(std::mem::replace(&mut self.pending, Vec::with_capacity(self.size)))
        } else {
            None
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

/// Networks and initial parameters for one run.
#[derive(Clone, Debug)]
pub struct Models {
    pub actor: AgentNet,
    pub actor_params: ParamSet<f32>,
    pub learner: AgentNet,
    pub learner_params: ParamSet<f32>,
    /// The acting model is the RL-trained model itself.
    pub shared: bool,
}

pub fn build_models(
    mode: Mode,
    env: &EnvConfig,
    actor_core: CoreConfig,
    learner_core: CoreConfig,
    seed: u64,
) -> Result<Models> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, acts) = (env.obs_dim(), env.num_actions());
    let mut lp = ParamSet::new();
    Ok(match mode {
        Mode::Lstm | Mode::Gtrxl => {
            let core = if mode == Mode::Lstm { actor_core } else { learner_core };
            let net = AgentNet::new(&mut lp, &mut rng, obs, acts, &[TowerConfig::full("agent", core)])?;
            Models {
                actor: net.clone(),
                actor_params: lp.clone(),
                learner: net,
                learner_params: lp,
                shared: true,
            }
        }
        Mode::AsymmAc => {
            let pi = TowerConfig {
                value: false,
                ..TowerConfig::full("pi", actor_core)
            };
            let v = TowerConfig {
                policy: false,
                ..TowerConfig::full("v", learner_core)
            };
            let learner = AgentNet::new(&mut lp, &mut rng, obs, acts, &[pi.clone(), v])?;
            let mut ap = ParamSet::new();
            let actor = AgentNet::new(&mut ap, &mut rng, obs, acts, &[pi])?;
            ap.copy_matching(&lp)?;
            Models {
                actor,
                actor_params: ap,
                learner,
                learner_params: lp,
                shared: false,
            }
        }
        Mode::Ald => {
            let mut ap = ParamSet::new();
            let actor = AgentNet::new(&mut ap, &mut rng, obs, acts, &[TowerConfig::full("actor", actor_core)])?;
            let learner = AgentNet::new(
                &mut lp,
                &mut rng,
                obs,
                acts,
                &[TowerConfig::full("learner", learner_core)],
            )?;
            Models {
                actor,
                actor_params: ap,
                learner,
                learner_params: lp,
                shared: false,
            }
        }
    })
}
