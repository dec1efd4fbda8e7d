//! Meta-Fetch: discover a hidden fetch order of K objects in a 7×7 room.
//!
//! Landing on the next object of the hidden order collects it; reward 1 is
//! paid only when that deepens the rewarded prefix of the current cycle.
//! Landing on a wrong object clears every collected flag. Completing the whole
//! order clears the flags and the rewarded prefix so the cycle pays again.
//!
//! Observation: a beam of 15 cells ahead × 3 lanes (left, centre, right of the
//! heading), starting one cell in front of the agent, 4 one-hot channels
//! `[free, wall, object, collected]`, channel-major (`[4, 15, 3]` flattened).
//! Outside the room reads as wall; each lane is occluded past its first wall.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dir, EnvError, Result, Step, FORWARD, TURN_LEFT, TURN_RIGHT};

pub const SIZE: usize = 7;
pub const CHANNELS: usize = 4;
pub const DEPTH: usize = 15;
pub const LANES: usize = 3;
pub const OBS_DIM: usize = CHANNELS * DEPTH * LANES;
pub const ACTIONS: usize = 3;
pub const MAX_STEPS: usize = 300;

const FREE: usize = 0;
const WALL: usize = 1;
const OBJECT: usize = 2;
const COLLECTED: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaFetch {
    pub objects: Vec<(usize, usize)>,
    /// `order[k]` is the object index to fetch at position `k`.
    pub order: Vec<usize>,
    pub collected: Vec<bool>,
    /// Objects collected so far in the current attempt.
    pub progress: usize,
    /// Deepest prefix already paid for in the current cycle.
    pub rewarded: usize,
    pub cycles: usize,
    pub pos: (usize, usize),
    pub dir: Dir,
    pub steps: usize,
    pub done: bool,
}

impl MetaFetch {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > SIZE * SIZE - 1 {
            return Err(EnvError::Config(format!(
                "Meta-Fetch needs 1..={} objects, got {k}",
                SIZE * SIZE - 1
            )));
        }
        let mut m = MetaFetch {
            objects: vec![(0, 0); k],
            order: (0..k).collect(),
            collected: vec![false; k],
            progress: 0,
            rewarded: 0,
            cycles: 0,
            pos: (0, 0),
            dir: Dir::N,
            steps: 0,
            done: false,
        };
        m.reset(seed);
        Ok(m)
    }

    /// Fixed layout, mainly for scripted scenarios.
    pub fn with_layout(pos: (usize, usize), dir: Dir, objects: Vec<(usize, usize)>, order: Vec<usize>) -> Result<Self> {
        let k = objects.len();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if k == 0 || sorted != (0..k).collect::<Vec<_>>() {
            return Err(EnvError::Config("order must be a permutation of the objects".into()));
        }
        let mut cells = objects.clone();
        cells.push(pos);
        cells.sort_unstable();
        cells.dedup();
        if cells.len() != k + 1 || cells.iter().any(|&(r, c)| r >= SIZE || c >= SIZE) {
            return Err(EnvError::Config(
                "objects must be distinct in-room cells off the start".into(),
            ));
        }
        Ok(MetaFetch {
            collected: vec![false; k],
            objects,
            order,
            progress: 0,
            rewarded: 0,
            cycles: 0,
            pos,
            dir,
            steps: 0,
            done: false,
        })
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.objects.len();
        let mut cells: Vec<(usize, usize)> = (0..SIZE * SIZE).map(|i| (i / SIZE, i % SIZE)).collect();
        cells.shuffle(&mut rng);
        self.pos = cells[0];
        self.objects = cells[1..=k].to_vec();
        self.dir = Dir::ALL[rng.gen_range(0..4)];
        self.order = (0..k).collect();
        self.order.shuffle(&mut rng);
        self.collected = vec![false; k];
        self.progress = 0;
        self.rewarded = 0;
        self.cycles = 0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    pub fn k(&self) -> usize {
        self.objects.len()
    }

    pub fn object_at(&self, cell: (usize, usize)) -> Option<usize> {
        self.objects.iter().position(|&o| o == cell)
    }

    pub fn next_target(&self) -> usize {
        self.order[self.progress]
    }

    fn clear(&mut self) {
        self.collected.iter_mut().for_each(|c| *c = false);
        self.progress = 0;
    }

    /// Collision with object `j`; returns the reward.
    fn touch(&mut self, j: usize) -> f64 {
        if self.collected[j] {
            return 0.0;
        }
        if j != self.next_target() {
            self.clear();
            return 0.0;
        }
        self.collected[j] = true;
        self.progress += 1;
        let mut reward = 0.0;
        if self.progress > self.rewarded {
            self.rewarded = self.progress;
            reward = 1.0;
        }
        if self.progress == self.k() {
            self.clear();
            self.rewarded = 0;
            self.cycles += 1;
        }
        reward
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let mut reward = 0.0;
        match action {
            FORWARD => {
                let (dr, dc) = self.dir.delta();
                let (r, c) = (self.pos.0 as i32 + dr, self.pos.1 as i32 + dc);
                if in_room(r, c) {
                    self.pos = (r as usize, c as usize);
                    if let Some(j) = self.object_at(self.pos) {
                        reward = self.touch(j);
                    }
                }
            }
            TURN_LEFT => self.dir = self.dir.left(),
            TURN_RIGHT => self.dir = self.dir.right(),
            _ => {
                return Err(EnvError::BadAction {
                    action,
                    actions: ACTIONS,
                })
            }
        }
        self.steps += 1;
        self.done = self.steps >= MAX_STEPS;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.done,
        })
    }

    pub fn observe(&self) -> Vec<f32> {
        let mut obs = vec![0.0f32; OBS_DIM];
        let (fr, fc) = self.dir.delta();
        let (rr, rc) = self.dir.right().delta();
        for lane in 0..LANES {
            let lat = lane as i32 - 1;
            for d in 0..DEPTH {
                let dist = d as i32 + 1;
                let r = self.pos.0 as i32 + fr * dist + rr * lat;
                let c = self.pos.1 as i32 + fc * dist + rc * lat;
                let ch = if !in_room(r, c) {
                    WALL
                } else {
                    match self.object_at((r as usize, c as usize)) {
                        Some(j) if self.collected[j] => COLLECTED,
                        Some(_) => OBJECT,
                        None => FREE,
                    }
                };
                obs[ch * DEPTH * LANES + d * LANES + lane] = 1.0;
                if ch == WALL {
                    break;
                }
            }
        }
        obs
    }

    pub fn ascii(&self) -> String {
        let mut s = String::new();
        for r in 0..SIZE {
            for c in 0..SIZE {
                let ch = if (r, c) == self.pos {
                    self.dir.glyph()
                } else if let Some(j) = self.object_at((r, c)) {
                    let rank = self.order.iter().position(|&o| o == j).unwrap();
                    let base = if self.collected[j] { b'a' } else { b'A' };
                    (base + rank as u8) as char
                } else {
                    '.'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

pub fn in_room(r: i32, c: i32) -> bool {
    r >= 0 && c >= 0 && (r as usize) < SIZE && (c as usize) < SIZE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_valid() {
        for seed in 0..200 {
            let m = MetaFetch::new(4, seed).unwrap();
            let mut cells = m.objects.clone();
            cells.push(m.pos);
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(cells.len(), 5);
        }
        assert!(MetaFetch::new(49, 0).is_err());
        assert!(MetaFetch::new(0, 0).is_err());
    }

    #[test]
    fn same_seed_same_layout() {
        assert_eq!(MetaFetch::new(3, 9).unwrap(), MetaFetch::new(3, 9).unwrap());
    }

    #[test]
    fn beam_one_hot_and_occluded() {
        let m = MetaFetch::with_layout((3, 3), Dir::N, vec![(1, 3)], vec![0]).unwrap();
        let obs = m.observe();
        let at = |ch: usize, d: usize, lane: usize| obs[ch * DEPTH * LANES + d * LANES + lane];
        // centre lane: free, object, free, wall, then nothing
        assert_eq!(
            [at(FREE, 0, 1), at(OBJECT, 1, 1), at(FREE, 2, 1), at(WALL, 3, 1)],
            [1.0; 4]
        );
        for d in 4..DEPTH {
            assert!((0..CHANNELS).all(|ch| at(ch, d, 1) == 0.0));
        }
        // every visible cell is one-hot
        for lane in 0..LANES {
            for d in 0..DEPTH {
                let s: f32 = (0..CHANNELS).map(|ch| at(ch, d, lane)).sum();
                assert!(s == 0.0 || s == 1.0);
            }
        }
    }

    #[test]
    fn done_only_at_limit() {
        let mut m = MetaFetch::new(2, 1).unwrap();
        for t in 0..MAX_STEPS {
            assert_eq!(m.step(TURN_LEFT).unwrap().done, t + 1 == MAX_STEPS);
        }
        assert!(m.step(FORWARD).is_err());
    }
}
