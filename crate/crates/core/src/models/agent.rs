//! Agent networks assembled from towers.
//!
//! A tower is `encoder → core (LSTM | GTrXL) → heads`. Ordinary agents have
//! one tower carrying both heads; the asymmetric actor-critic baseline uses a
//! small policy tower and a separate large value tower.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, NodeId, Real, Tensor};

use super::lstm::LstmState;
use super::{
    Bound, Encoder, Gtrxl, GtrxlConfig, GtrxlMemory, Init, Linear, Lstm, LstmConfig, ModelError, ParamSet, PopArt,
    Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CoreConfig {
    Lstm { hidden: usize },
    Gtrxl(GtrxlConfig),
}

impl CoreConfig {
    pub fn feature_dim(&self) -> usize {
        match self {
            CoreConfig::Lstm { hidden } => *hidden,
            CoreConfig::Gtrxl(c) => c.embed_dim,
        }
    }

    pub fn is_transformer(&self) -> bool {
        matches!(self, CoreConfig::Gtrxl(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub name: String,
    pub core: CoreConfig,
    /// Encoder output width; for GTrXL cores this must equal the embedding.
    pub encoder_dim: usize,
    pub policy: bool,
    pub value: bool,
}

impl TowerConfig {
    /// Tower with both heads and an encoder matching the core width.
    pub fn full(name: &str, core: CoreConfig) -> Self {
        TowerConfig {
            name: name.to_string(),
            encoder_dim: core.feature_dim(),
            core,
            policy: true,
            value: true,
        }
    }
}

#[derive(Clone, Debug)]
enum Core {
    Lstm(Lstm),
    Gtrxl(Gtrxl),
}

#[derive(Clone, Debug)]
struct Tower {
    cfg: TowerConfig,
    encoder: Encoder,
    core: Core,
    policy: Option<Linear>,
    value: Option<Linear>,
}

/// Recurrent state of one sequence in one tower.
#[derive(Clone, Debug, PartialEq)]
pub enum SeqState<S> {
    Lstm(LstmState<S>),
    Gtrxl(GtrxlMemory<S>),
}

/// Per-tower recurrent state of one sequence.
pub type AgentMemory<S> = Vec<SeqState<S>>;

#[derive(Clone, Copy, Debug)]
pub struct AgentOutput {
    /// `[N, actions]`
    pub logits: NodeId,
    /// `[N, 1]` in PopArt-normalized space
    pub value: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct AgentNet {
    pub obs_dim: usize,
    pub num_actions: usize,
    towers: Vec<Tower>,
    policy_tower: usize,
    value_tower: Option<usize>,
}

impl AgentNet {
    pub fn new<S: Real>(
        ps: &mut ParamSet<S>,
        rng: &mut impl Rng,
        obs_dim: usize,
        num_actions: usize,
        towers: &[TowerConfig],
    ) -> Result<Self> {
        let mut built = Vec::with_capacity(towers.len());
        for tc in towers {
            let encoder = Encoder::new(ps, rng, &format!("{}.enc", tc.name), obs_dim, tc.encoder_dim);
            let core = match tc.core {
                CoreConfig::Lstm { hidden } => Core::Lstm(Lstm::new(
                    ps,
                    rng,
                    &format!("{}.lstm", tc.name),
                    LstmConfig {
                        input_dim: tc.encoder_dim,
                        hidden_dim: hidden,
                    },
                )?),
                CoreConfig::Gtrxl(c) => {
                    if c.embed_dim != tc.encoder_dim {
                        return Err(ModelError::Mismatch(format!(
                            "tower `{}`: encoder width {} != embedding {}",
                            tc.name, tc.encoder_dim, c.embed_dim
                        )));
                    }
                    Core::Gtrxl(Gtrxl::new(ps, rng, &format!("{}.gtrxl", tc.name), c)?)
                }
            };
            let f = tc.core.feature_dim();
            let policy = tc
                .policy
                .then(|| Linear::new(ps, rng, &format!("{}.policy", tc.name), f, num_actions, Init::FanIn));
            let value = tc
                .value
                .then(|| Linear::new(ps, rng, &format!("{}.value", tc.name), f, 1, Init::FanIn));
            built.push(Tower {
                cfg: tc.clone(),
                encoder,
                core,
                policy,
                value,
            });
        }
        let policy_tower = built
            .iter()
            .position(|t| t.policy.is_some())
            .ok_or_else(|| ModelError::Mismatch("no tower carries a policy head".into()))?;
        let value_tower = built.iter().position(|t| t.value.is_some());
        Ok(AgentNet {
            obs_dim,
            num_actions,
            towers: built,
            policy_tower,
            value_tower,
        })
    }

    pub fn tower_configs(&self) -> Vec<TowerConfig> {
        self.towers.iter().map(|t| t.cfg.clone()).collect()
    }

    pub fn has_value(&self) -> bool {
        self.value_tower.is_some()
    }

    pub fn uses_transformer(&self) -> bool {
        self.towers.iter().any(|t| t.cfg.core.is_transformer())
    }

    /// Parameter indices of the value head `(weights [F,1], bias [1])`.
    pub fn value_head(&self) -> Option<(usize, usize)> {
        self.value_tower
            .and_then(|i| self.towers[i].value.as_ref())
            .map(|l| (l.w, l.b))
    }

    pub fn gtrxl(&self) -> Option<&Gtrxl> {
        self.towers.iter().find_map(|t| match &t.core {
            Core::Gtrxl(g) => Some(g),
            _ => None,
        })
    }

    pub fn initial_memory<S: Real>(&self) -> AgentMemory<S> {
        self.towers
            .iter()
            .map(|t| match &t.core {
                Core::Lstm(l) => SeqState::Lstm(LstmState::zeros(l.cfg.hidden_dim)),
                Core::Gtrxl(g) => SeqState::Gtrxl(GtrxlMemory::empty(&g.cfg)),
            })
            .collect()
    }

    /// Forward over `b` time-major sequences of `t` steps; `obs:[t·b, obs_dim]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        obs: Tensor<S>,
        t: usize,
        b: usize,
        first: &[bool],
        mems: &[AgentMemory<S>],
        carry_len: usize,
    ) -> Result<(AgentOutput, Vec<AgentMemory<S>>)> {
        if obs.cols() != self.obs_dim || obs.rows() != t * b {
            return Err(ModelError::Mismatch(format!(
                "observations {:?} for t={t}, b={b}, obs_dim={}",
                obs.shape(),
                self.obs_dim
            )));
        }
        if mems.len() != b || mems.iter().any(|m| m.len() != self.towers.len()) {
            return Err(ModelError::Mismatch("memory count does not match batch/towers".into()));
        }
        let x = g.constant(obs);
        let mut next: Vec<AgentMemory<S>> = vec![Vec::with_capacity(self.towers.len()); b];
        let mut logits = None;
        let mut value = None;
        for (ti, tower) in self.towers.iter().enumerate() {
            let enc = tower.encoder.forward(g, p, x)?;
            let feats = match &tower.core {
                Core::Lstm(l) => {
                    let states = mems
                        .iter()
                        .map(|m| match &m[ti] {
                            SeqState::Lstm(s) => Ok(s.clone()),
                            _ => Err(ModelError::Mismatch("expected LSTM state".into())),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (f, carry) = l.unroll(g, p, enc, t, b, first, &states, carry_len)?;
                    for (n, c) in next.iter_mut().zip(carry) {
                        n.push(SeqState::Lstm(c));
                    }
                    f
                }
                Core::Gtrxl(m) => {
                    let states = mems
                        .iter()
                        .map(|mm| match &mm[ti] {
                            SeqState::Gtrxl(s) => Ok(s.clone()),
                            _ => Err(ModelError::Mismatch("expected GTrXL memory".into())),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (f, carry) = m.forward(g, p, enc, t, b, first, &states, carry_len)?;
                    for (n, c) in next.iter_mut().zip(carry) {
                        n.push(SeqState::Gtrxl(c));
                    }
                    f
                }
            };
            if ti == self.policy_tower {
                logits = Some(tower.policy.as_ref().expect("policy head").forward(g, p, feats)?);
            }
            if Some(ti) == self.value_tower {
                value = Some(tower.value.as_ref().expect("value head").forward(g, p, feats)?);
            }
        }
        Ok((
            AgentOutput {
                logits: logits.expect("policy tower ran"),
                value,
            },
            next,
        ))
    }

    /// Rescales the value head after a PopArt statistics update.
    pub fn popart_update<S: Real>(&self, ps: &mut ParamSet<S>, stats: &mut PopArt, targets: &[f64]) -> Result<()> {
        let (wi, bi) = self
            .value_head()
            .ok_or_else(|| ModelError::Mismatch("network has no value head".into()))?;
        let mut w = ps.get(wi).clone();
        let mut b = ps.get(bi).clone();
        stats.update(w.data_mut(), &mut b.data_mut()[0], targets)?;
        ps.set(wi, w)?;
        ps.set(bi, b)?;
        Ok(())
    }

    /// Serializes one sequence's memory (f32) for trajectory transport.
    pub fn memory_to_flat(&self, m: &AgentMemory<f32>) -> Vec<f32> {
        let mut out = Vec::new();
        for s in m {
            match s {
                SeqState::Lstm(st) => {
                    out.extend_from_slice(&st.h);
                    out.extend_from_slice(&st.c);
                }
                SeqState::Gtrxl(mem) => {
                    out.push(mem.len() as f32);
                    out.extend(mem.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }));
                    for l in &mem.layers {
                        out.extend_from_slice(l.data());
                    }
                }
            }
        }
        out
    }

    pub fn memory_from_flat(&self, flat: &[f32]) -> Result<AgentMemory<f32>> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[f32]> {
            if pos + n > flat.len() {
                return Err(ModelError::Mismatch("truncated memory encoding".into()));
            }
            pos += n;
            Ok(&flat[pos - n..pos])
        };
        let mut out = Vec::with_capacity(self.towers.len());
        for t in &self.towers {
            match &t.core {
                Core::Lstm(l) => {
                    let h = l.cfg.hidden_dim;
                    let hv = take(h)?.to_vec();
                    let cv = take(h)?.to_vec();
                    out.push(SeqState::Lstm(LstmState { h: hv, c: cv }));
                }
                Core::Gtrxl(gx) => {
                    let len = take(1)?[0] as usize;
                    if len > gx.cfg.mem_len {
                        return Err(ModelError::Mismatch(format!(
                            "memory length {len} > {}",
                            gx.cfg.mem_len
                        )));
                    }
                    let valid = take(len)?.iter().map(|&v| v != 0.0).collect();
                    let e = gx.cfg.embed_dim;
                    let mut layers = Vec::with_capacity(gx.cfg.layers);
                    for _ in 0..gx.cfg.layers {
                        layers.push(Tensor::new(&[len, e], take(len * e)?.to_vec())?);
                    }
                    out.push(SeqState::Gtrxl(GtrxlMemory { layers, valid }));
                }
            }
        }
        if pos != flat.len() {
            return Err(ModelError::Mismatch("trailing values in memory encoding".into()));
        }
        Ok(out)
    }
}
