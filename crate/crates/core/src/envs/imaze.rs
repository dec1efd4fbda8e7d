//! I-Maze: recall a colour seen at the start to pick the rewarded goal.
//!
//! Layout for side `n`: the whole top row, the centre column and the whole
//! bottom row are corridor. The agent starts at the top-left facing east, the
//! indicator sits at the top-right end, the goals at the two bottom ends.
//! Red means the left goal pays, green the right one.
//!
//! Observation: `n` pixels starting at the agent's own cell and extending
//! forward, 3 channels, channel-major (`[3, n]` flattened). Channel 0 is +1
//! for free space and -1 for wall; channels 1 and 2 flag a green or red
//! indicator. Pixels past the first wall are all zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dir, EnvError, Result, Step, FORWARD, NOOP, TURN_LEFT, TURN_RIGHT};

pub const CHANNELS: usize = 3;
pub const ACTIONS: usize = 4;
pub const SHAPING_REWARD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    /// Right goal rewarded.
    Green,
    /// Left goal rewarded.
    Red,
}

pub fn horizon(size: usize) -> usize {
    if size == 9 {
        150
    } else {
        350
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IMaze {
    pub size: usize,
    pub pos: (usize, usize),
    pub dir: Dir,
    pub indicator: Indicator,
    /// First-visit flags of the central column, rows `1..size-1`; only
    /// populated for the 15×15 maze.
    pub visited: Vec<bool>,
    pub steps: usize,
    pub horizon: usize,
    pub done: bool,
}

impl IMaze {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        if size != 9 && size != 15 {
            return Err(EnvError::Config(format!("I-Maze size must be 9 or 15, got {size}")));
        }
        let mut m = IMaze {
            size,
            pos: (0, 0),
            dir: Dir::E,
            indicator: Indicator::Green,
            visited: Vec::new(),
            steps: 0,
            horizon: horizon(size),
            done: false,
        };
        m.reset(seed);
        Ok(m)
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.indicator = if rng.gen::<bool>() {
            Indicator::Green
        } else {
            Indicator::Red
        };
        self.pos = (0, 0);
        self.dir = Dir::E;
        self.steps = 0;
        self.done = false;
        self.visited = if self.size == 15 {
            vec![false; self.size - 2]
        } else {
            Vec::new()
        };
        self.observe()
    }

    pub fn obs_dim(&self) -> usize {
        CHANNELS * self.size
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }

    pub fn is_corridor(&self, r: i32, c: i32) -> bool {
        let n = self.size as i32;
        if r < 0 || c < 0 || r >= n || c >= n {
            return false;
        }
        r == 0 || r == n - 1 || c == self.center() as i32
    }

    pub fn indicator_cell(&self) -> (usize, usize) {
        (0, self.size - 1)
    }

    pub fn left_goal(&self) -> (usize, usize) {
        (self.size - 1, 0)
    }

    pub fn right_goal(&self) -> (usize, usize) {
        (self.size - 1, self.size - 1)
    }

    pub fn correct_goal(&self) -> (usize, usize) {
        match self.indicator {
            Indicator::Green => self.right_goal(),
            Indicator::Red => self.left_goal(),
        }
    }

    /// Number of cells that can pay the shaping reward.
    pub fn shaping_cells(&self) -> usize {
        self.visited.len()
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if action >= ACTIONS {
            return Err(EnvError::BadAction {
                action,
                actions: ACTIONS,
            });
        }
        let mut reward = 0.0;
        match action {
            FORWARD => {
                let (dr, dc) = self.dir.delta();
                let (r, c) = (self.pos.0 as i32 + dr, self.pos.1 as i32 + dc);
                if self.is_corridor(r, c) {
                    self.pos = (r as usize, c as usize);
                    if self.pos == self.correct_goal() {
                        reward = 1.0;
                        self.done = true;
                    } else if self.pos == self.left_goal() || self.pos == self.right_goal() {
                        self.done = true;
                    } else if self.size == 15 && self.pos.1 == self.center() && r > 0 && r < self.size as i32 - 1 {
                        let slot = &mut self.visited[r as usize - 1];
                        if !*slot {
                            *slot = true;
                            reward = SHAPING_REWARD;
                        }
                    }
                }
            }
            TURN_LEFT => self.dir = self.dir.left(),
            TURN_RIGHT => self.dir = self.dir.right(),
            NOOP => {}
            _ => unreachable!(),
        }
        self.steps += 1;
        if self.steps >= self.horizon {
            self.done = true;
        }
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.done,
        })
    }

    pub fn observe(&self) -> Vec<f32> {
        let n = self.size;
        let mut obs = vec![0.0f32; CHANNELS * n];
        let (dr, dc) = self.dir.delta();
        for k in 0..n {
            let r = self.pos.0 as i32 + dr * k as i32;
            let c = self.pos.1 as i32 + dc * k as i32;
            if !self.is_corridor(r, c) {
                obs[k] = -1.0;
                break;
            }
            obs[k] = 1.0;
            if (r as usize, c as usize) == self.indicator_cell() {
                let ch = match self.indicator {
                    Indicator::Green => 1,
                    Indicator::Red => 2,
                };
                obs[ch * n + k] = 1.0;
            }
        }
        obs
    }

    pub fn ascii(&self) -> String {
        let mut s = String::new();
        for r in 0..self.size {
            for c in 0..self.size {
                let ch = if (r, c) == self.pos {
                    self.dir.glyph()
                } else if (r, c) == self.indicator_cell() {
                    match self.indicator {
                        Indicator::Green => 'G',
                        Indicator::Red => 'R',
                    }
                } else if (r, c) == self.left_goal() || (r, c) == self.right_goal() {
                    '*'
                } else if self.is_corridor(r as i32, c as i32) {
                    '.'
                } else {
                    '#'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}
