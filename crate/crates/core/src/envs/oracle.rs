//! Scripted oracles with full state access, used as feasibility bounds.

use std::collections::VecDeque;

use super::imaze::IMaze;
use super::metafetch::{in_room, MetaFetch};
use super::{Dir, FORWARD, TURN_LEFT, TURN_RIGHT};

/// Breadth-first search over `(cell, heading)` for the shortest action list
/// whose last action is a forward move onto `goal`. `enter(cell)` says whether
/// an intermediate cell may be entered.
fn plan(start: ((usize, usize), Dir), goal: (usize, usize), enter: impl Fn(i32, i32) -> bool) -> Option<Vec<usize>> {
    let idx = |p: (usize, usize), d: Dir| (p.0 * 64 + p.1) * 4 + d as usize;
    let mut prev: std::collections::HashMap<usize, (usize, usize)> = Default::default();
    let mut seen = std::collections::HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(idx(start.0, start.1));
    queue.push_back(start);
    while let Some((p, d)) = queue.pop_front() {
        let here = idx(p, d);
        let (dr, dc) = d.delta();
        let (r, c) = (p.0 as i32 + dr, p.1 as i32 + dc);
        if r >= 0 && c >= 0 && (r as usize, c as usize) == goal {
            let mut actions = vec![FORWARD];
            let mut cur = here;
            while let Some(&(from, a)) = prev.get(&cur) {
                actions.push(a);
                cur = from;
            }
            actions.reverse();
            return Some(actions);
        }
        let mut next = vec![(p, d.left(), TURN_LEFT), (p, d.right(), TURN_RIGHT)];
        if enter(r, c) {
            next.push(((r as usize, c as usize), d, FORWARD));
        }
        for (np, nd, a) in next {
            let key = idx(np, nd);
            if seen.insert(key) {
                prev.insert(key, (here, a));
                queue.push_back((np, nd));
            }
        }
    }
    None
}

/// Shortest action sequence to the rewarded I-Maze goal.
pub fn imaze_plan(m: &IMaze) -> Vec<usize> {
    let goal = m.correct_goal();
    let blocked = [m.left_goal(), m.right_goal()];
    plan((m.pos, m.dir), goal, |r, c| {
        m.is_corridor(r, c) && !blocked.contains(&(r as usize, c as usize))
    })
    .expect("rewarded goal is always reachable")
}

/// Shortest path onto object `target` that avoids other uncollected objects
/// when possible, and passes over them otherwise.
pub fn fetch_path(m: &MetaFetch, target: usize) -> Vec<usize> {
    let goal = m.objects[target];
    let careful = plan((m.pos, m.dir), goal, |r, c| {
        in_room(r, c)
            && match m.object_at((r as usize, c as usize)) {
                Some(j) => m.collected[j],
                None => true,
            }
    });
    careful.unwrap_or_else(|| plan((m.pos, m.dir), goal, in_room).expect("room is connected"))
}

/// Trial-and-error fetcher: knows where the objects are but not their order,
/// discovers the order one position at a time and then repeats it.
#[derive(Clone, Debug, Default)]
pub struct FetchOracle {
    known: Vec<usize>,
    tried: Vec<usize>,
}

impl FetchOracle {
    fn choose(&self, m: &MetaFetch) -> usize {
        if m.progress < self.known.len() {
            return self.known[m.progress];
        }
        (0..m.k())
            .find(|j| !self.known.contains(j) && !self.tried.contains(j))
            .expect("some candidate is untried")
    }

    /// Plays until the episode ends; returns the episode return.
    pub fn run(&mut self, m: &mut MetaFetch) -> f64 {
        let mut total = 0.0;
        while !m.done {
            let target = self.choose(m);
            let (progress, cycles) = (m.progress, m.cycles);
            let mut arrived = false;
            for a in fetch_path(m, target) {
                let s = m.step(a).expect("episode running");
                total += s.reward;
                if m.pos == m.objects[target] || m.done {
                    arrived = m.pos == m.objects[target];
                    break;
                }
                if m.progress != progress {
                    break; // passed over another object; replan
                }
            }
            if arrived && progress == self.known.len() {
                if m.cycles > cycles || m.progress == progress + 1 {
                    self.known.push(target);
                    self.tried.clear();
                } else {
                    self.tried.push(target);
                }
            } else if m.progress > self.known.len() {
                // an unplanned collection on a fallback path; read it off the state
                self.known = m.order[..m.progress].to_vec();
                self.tried.clear();
            }
        }
        total
    }
}
