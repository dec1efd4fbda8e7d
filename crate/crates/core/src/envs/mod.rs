//! Partially observable gridworlds: I-Maze and Meta-Fetch.

pub mod imaze;
pub mod metafetch;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use imaze::IMaze;
pub use metafetch::MetaFetch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unsupported configuration: {0}")]
    Config(String),
    #[error("step called after the episode ended")]
    StepAfterDone,
    #[error("action {action} out of range for {actions} actions")]
    BadAction { action: usize, actions: usize },
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// Headings, clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (-1, 0),
            Dir::E => (0, 1),
            Dir::S => (1, 0),
            Dir::W => (0, -1),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }

    fn glyph(self) -> char {
        match self {
            Dir::N => '^',
            Dir::E => '>',
            Dir::S => 'v',
            Dir::W => '<',
        }
    }
}

/// Shared action indices. I-Maze additionally has `NOOP`.
pub const FORWARD: usize = 0;
pub const TURN_LEFT: usize = 1;
pub const TURN_RIGHT: usize = 2;
pub const NOOP: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f32>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    IMaze,
    MetaFetch,
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imaze" => Ok(EnvKind::IMaze),
            "metafetch" => Ok(EnvKind::MetaFetch),
            other => Err(EnvError::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// I-Maze side length (9 or 15).
    pub size: usize,
    /// Meta-Fetch object count.
    pub objects: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: EnvKind::IMaze,
            size: 9,
            objects: 4,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn build(&self, seed: u64) -> Result<Env> {
        Ok(match self.kind {
            EnvKind::IMaze => Env::IMaze(IMaze::new(self.size, seed)?),
            EnvKind::MetaFetch => Env::MetaFetch(MetaFetch::new(self.objects, seed)?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::IMaze => imaze::CHANNELS * self.size,
            EnvKind::MetaFetch => metafetch::OBS_DIM,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self.kind {
            EnvKind::IMaze => imaze::ACTIONS,
            EnvKind::MetaFetch => metafetch::ACTIONS,
        }
    }
}

/// Either environment behind one value type so actors can own it directly.
#[derive(Clone, Debug)]
pub enum Env {
    IMaze(IMaze),
    MetaFetch(MetaFetch),
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::IMaze(_) => EnvKind::IMaze,
            Env::MetaFetch(_) => EnvKind::MetaFetch,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f32> {
        match self {
            Env::IMaze(e) => e.reset(seed),
            Env::MetaFetch(e) => e.reset(seed),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        match self {
            Env::IMaze(e) => e.step(action),
            Env::MetaFetch(e) => e.step(action),
        }
    }

    pub fn observe(&self) -> Vec<f32> {
        match self {
            Env::IMaze(e) => e.observe(),
            Env::MetaFetch(e) => e.observe(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Env::IMaze(e) => e.obs_dim(),
            Env::MetaFetch(_) => metafetch::OBS_DIM,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Env::IMaze(_) => imaze::ACTIONS,
            Env::MetaFetch(_) => metafetch::ACTIONS,
        }
    }

    pub fn ascii(&self) -> String {
        match self {
            Env::IMaze(e) => e.ascii(),
            Env::MetaFetch(e) => e.ascii(),
        }
    }
}
