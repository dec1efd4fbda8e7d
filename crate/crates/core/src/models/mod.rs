//! Actor and learner sequence models.

pub mod agent;
pub mod checkpoint;
pub mod gradcheck;
pub mod gtrxl;
pub mod heads;
pub mod lstm;
mod params;

use rand::Rng;
use thiserror::Error;

use crate::tensor::{init, Graph, NodeId, Real, Tensor, TensorError};

pub use agent::{AgentMemory, AgentNet, AgentOutput, CoreConfig, SeqState, TowerConfig};
pub use gtrxl::{Gtrxl, GtrxlConfig, GtrxlMemory, Positional};
pub use heads::PopArt;
pub use lstm::{Lstm, LstmConfig};
pub use params::{Bound, ParamSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
    #[error("parameter `{name}` has shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Orthogonal,
    Zeros,
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Real>(
        ps: &mut ParamSet<S>,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_kind: Init,
    ) -> Self {
        let w = match init_kind {
            Init::FanIn => init::fan_in_uniform(rng, in_dim, out_dim),
            Init::Orthogonal => init::orthogonal(rng, in_dim, out_dim, 1.0),
            Init::Zeros => Tensor::zeros(&[in_dim, out_dim]),
        };
        Linear {
            w: ps.push(format!("{name}.w"), w),
            b: ps.push(format!("{name}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let h = g.matmul(x, p[self.w])?;
        Ok(g.add(h, p[self.b])?)
    }
}

/// Learned gain and bias around a parameter-free layer norm.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn new<S: Real>(ps: &mut ParamSet<S>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: ps.push(format!("{name}.gain"), Tensor::full(&[dim], S::one())),
            bias: ps.push(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let n = g.layer_norm(x);
        let s = g.mul(n, p[self.gain])?;
        Ok(g.add(s, p[self.bias])?)
    }
}

/// Flatten + linear + ReLU from channelized pixel observations.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub linear: Linear,
}

impl Encoder {
    pub fn new<S: Real>(ps: &mut ParamSet<S>, rng: &mut impl Rng, name: &str, obs_dim: usize, out_dim: usize) -> Self {
        Encoder {
            linear: Linear::new(ps, rng, name, obs_dim, out_dim, Init::FanIn),
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, obs: NodeId) -> Result<NodeId> {
        if g.value(obs).cols() != self.linear.in_dim {
            return Err(ModelError::Mismatch(format!(
                "observation width {} but encoder expects {}",
                g.value(obs).cols(),
                self.linear.in_dim
            )));
        }
        let h = self.linear.forward(g, p, obs)?;
        Ok(g.relu(h))
    }
}
