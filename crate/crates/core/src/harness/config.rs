//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistillConfig;
use crate::envs::{EnvConfig, EnvKind};
use crate::models::{CoreConfig, GtrxlConfig, Positional};
use crate::pipeline::{DprlMode, Mode, PipelineConfig};
use crate::rl::RlConfig;
use crate::tensor::AdamConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsConfig {
    /// LSTM hidden size of the acting model; `None` picks the environment
    /// default (32 for I-Maze, 128 for Meta-Fetch).
    pub actor_hidden: Option<usize>,
    pub learner: GtrxlConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            actor_hidden: None,
            learner: GtrxlConfig::desk(),
        }
    }
}

impl ModelsConfig {
    pub fn actor_core(&self, env: &EnvConfig) -> CoreConfig {
        let hidden = self.actor_hidden.unwrap_or(match env.kind {
            EnvKind::IMaze => 32,
            EnvKind::MetaFetch => 128,
        });
        CoreConfig::Lstm { hidden }
    }

    pub fn learner_core(&self) -> CoreConfig {
        CoreConfig::Gtrxl(self.learner)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub env: EnvConfig,
    pub models: ModelsConfig,
    pub pipeline: PipelineConfig,
    pub rl: RlConfig,
    pub distill: DistillConfig,
    pub optim: AdamConfig,
    /// Environment-step budget.
    pub env_steps: u64,
    pub seed: u64,
    pub metrics_every: u64,
    pub deterministic: bool,
    pub output: Option<PathBuf>,
    /// Ends the run at the first metrics record whose success rate reaches
    /// this value.
    pub stop_at_success: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Ald,
            env: EnvConfig::default(),
            models: ModelsConfig::default(),
            pipeline: PipelineConfig::default(),
            rl: RlConfig::default(),
            distill: DistillConfig::default(),
            optim: AdamConfig::default(),
            env_steps: 1_000_000,
            seed: 0,
            metrics_every: 10_000,
            deterministic: false,
            output: None,
            stop_at_success: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
        }),
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut dprl_kind = "free".to_string();
        let mut dprl_ratio = 1.0;
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v, &mut dprl_kind, &mut dprl_ratio)?;
        }
        cfg.pipeline.dprl = match dprl_kind.as_str() {
            "free" => DprlMode::Free,
            "fixed" => DprlMode::Fixed(dprl_ratio),
            other => {
                return Err(ConfigError::Value {
                    key: "pipeline.dprl".into(),
                    value: other.into(),
                })
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, k: &str, v: &str, dprl_kind: &mut String, dprl_ratio: &mut f64) -> Result<()> {
        let g = &mut self.models.learner;
        match k {
            "run.mode" => self.mode = v.parse().map_err(ConfigError::Invalid)?,
            "run.seed" => self.seed = parse(k, v)?,
            "run.env_steps" => self.env_steps = parse(k, v)?,
            "run.metrics_every" => self.metrics_every = parse(k, v)?,
            "run.deterministic" => self.deterministic = parse_bool(k, v)?,
            "run.output" => self.output = Some(PathBuf::from(v)),
            "run.stop_at_success" => self.stop_at_success = Some(parse(k, v)?),
            "env.name" => {
                self.env.kind = v.parse().map_err(|_| ConfigError::Value {
                    key: k.into(),
                    value: v.into(),
                })?
            }
            "env.size" => self.env.size = parse(k, v)?,
            "env.objects" => self.env.objects = parse(k, v)?,
            "env.seed" => self.env.seed = parse(k, v)?,
            "model.actor_hidden" => self.models.actor_hidden = Some(parse(k, v)?),
            "model.layers" => g.layers = parse(k, v)?,
            "model.embed_dim" => g.embed_dim = parse(k, v)?,
            "model.heads" => g.heads = parse(k, v)?,
            "model.head_dim" => g.head_dim = parse(k, v)?,
            "model.ff_dim" => g.ff_dim = parse(k, v)?,
            "model.mem_len" => g.mem_len = parse(k, v)?,
            "model.gate_bias" => g.gate_bias = parse(k, v)?,
            "model.shared_positional" => g.shared_positional = parse_bool(k, v)?,
            "model.positional" => {
                g.positional = match v {
                    "relative" => Positional::Relative,
                    "absolute" => Positional::Absolute,
                    _ => {
                        return Err(ConfigError::Value {
                            key: k.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "pipeline.actors" => self.pipeline.actors = parse(k, v)?,
            "pipeline.distillers" => self.pipeline.distillers = parse(k, v)?,
            "pipeline.batch" => self.pipeline.batch = parse(k, v)?,
            "pipeline.unroll" => self.pipeline.unroll = parse(k, v)?,
            "pipeline.k_l" => self.pipeline.k_l = parse(k, v)?,
            "pipeline.k_a" => self.pipeline.k_a = parse(k, v)?,
            "pipeline.replay_capacity" => self.pipeline.replay_capacity = parse(k, v)?,
            "pipeline.channel_depth" => self.pipeline.channel_depth = parse(k, v)?,
            "pipeline.dprl" => *dprl_kind = v.to_string(),
            "pipeline.dprl_ratio" => *dprl_ratio = parse(k, v)?,
            "pipeline.staleness_bound" => self.pipeline.staleness_bound = parse(k, v)?,
            "pipeline.actor_budget_ms" => self.pipeline.actor_budget_ms = Some(parse(k, v)?),
            "pipeline.learner_replay" => self.pipeline.learner_replay = parse_bool(k, v)?,
            "rl.gamma" => self.rl.gamma = parse(k, v)?,
            "rl.vtrace" => self.rl.vtrace = parse_bool(k, v)?,
            "rl.entropy_coef" => self.rl.entropy_coef = parse(k, v)?,
            "rl.value_coef" => self.rl.value_coef = parse(k, v)?,
            "rl.rho_bar" => self.rl.rho_bar = parse(k, v)?,
            "rl.c_bar" => self.rl.c_bar = parse(k, v)?,
            "rl.beta_l" => self.rl.beta_l = parse(k, v)?,
            "distill.alpha_pi" => self.distill.alpha_pi = parse(k, v)?,
            "distill.alpha_v" => self.distill.alpha_v = parse(k, v)?,
            "optim.lr" => self.optim.lr = parse(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.pipeline.validate().map_err(|e| inv(e.to_string()))?;
        self.rl.validate().map_err(|e| inv(e.to_string()))?;
        self.distill.validate().map_err(|e| inv(e.to_string()))?;
        self.env.build(self.env.seed).map_err(|e| inv(e.to_string()))?;
        if self.stop_at_success.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return Err(inv("run.stop_at_success must be in [0, 1]".into()));
        }
        if self.optim.lr.is_nan() || self.optim.lr <= 0.0 {
            return Err(inv("optim.lr must be > 0".into()));
        }
        let g = &self.models.learner;
        if g.layers == 0 || g.heads == 0 || g.head_dim == 0 || g.embed_dim == 0 {
            return Err(inv("transformer dimensions must be >= 1".into()));
        }
        if self.models.actor_hidden == Some(0) {
            return Err(inv("model.actor_hidden must be >= 1".into()));
        }
        if self.mode == Mode::Ald && self.pipeline.distillers == 0 {
            return Err(inv("ald mode needs at least one distill worker".into()));
        }
        Ok(())
    }
}
