//! Metric events, the collector that turns them into JSONL records, and the
//! run summary.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distill::DistillStats;
use crate::envs::EnvKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub actor: u32,
    /// Global environment steps of this actor when the episode ended.
    pub actor_steps: u64,
    pub ret: f64,
    pub terminal_reward: f64,
    pub length: u64,
}

/// Episode success: the rewarded I-Maze goal, or at least one full Meta-Fetch
/// cycle (a return of at least `objects`).
pub fn episode_success(ep: &EpisodeRecord, kind: EnvKind, objects: usize) -> bool {
    match kind {
        EnvKind::IMaze => ep.terminal_reward >= 1.0,
        EnvKind::MetaFetch => ep.ret >= objects as f64 - 1e-9,
    }
}

/// Success rate over completed episodes; `None` when there are none.
pub fn evaluate_success(episodes: &[EpisodeRecord], kind: EnvKind, objects: usize) -> Option<f64> {
    if episodes.is_empty() {
        return None;
    }
    let ok = episodes.iter().filter(|e| episode_success(e, kind, objects)).count();
    Some(ok as f64 / episodes.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerLosses {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Actor {
        actor: u32,
        steps: u64,
        episodes: Vec<EpisodeRecord>,
    },
    Learner {
        agent_steps: u64,
        idle_secs: f64,
        busy_secs: f64,
        losses: LearnerLosses,
    },
    Distill {
        agent_steps: u64,
        stats: DistillStats,
    },
    Runner {
        batches: u64,
        stale: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub time: f64,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub distill_steps: u64,
    pub learner_updates: u64,
    pub distill_updates: u64,
    pub actor_sps: f64,
    pub learner_sps: f64,
    pub learner_idle: Option<f64>,
    pub dprl_ratio: Option<f64>,
    pub episodes: u64,
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub loss: Option<LearnerLosses>,
    pub distill_loss: Option<DistillStats>,
    pub stale_annotations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub env_steps: u64,
    pub learner_steps: u64,
    pub distill_steps: u64,
    pub learner_updates: u64,
    pub distill_updates: u64,
    pub episodes: u64,
    pub batches_annotated: u64,
    pub stale_annotations: u64,
    pub learner_idle_secs: f64,
    pub learner_busy_secs: f64,
}

#[derive(Clone, Debug, Default)]
struct Window {
    env_steps: u64,
    learner_steps: u64,
    idle: f64,
    busy: f64,
    returns: Vec<f64>,
    successes: usize,
    loss_sum: LearnerLosses,
    loss_n: u64,
    distill_sum: DistillStats,
    distill_n: u64,
}

/// Aggregates role events into records emitted every `cadence` environment
/// steps. With a logical clock (`wall = false`) the time and rate fields are
/// zero so that seeded runs produce identical streams.
pub struct Collector {
    cadence: u64,
    kind: EnvKind,
    objects: usize,
    start: Option<Instant>,
    last_time: f64,
    next_emit: u64,
    pub totals: Totals,
    pub per_actor: BTreeMap<u32, u64>,
    pub episodes: Vec<EpisodeRecord>,
    window: Window,
    pub records: Vec<MetricsRecord>,
    sink: Option<Box<dyn Write + Send>>,
    actors: usize,
}

impl Collector {
    pub fn new(cadence: u64, kind: EnvKind, objects: usize, actors: usize, wall: bool) -> Self {
        Collector {
            cadence: cadence.max(1),
            kind,
            objects,
            start: wall.then(Instant::now),
            last_time: 0.0,
            next_emit: cadence.max(1),
            totals: Totals::default(),
            per_actor: BTreeMap::new(),
            episodes: Vec::new(),
            window: Window::default(),
            records: Vec::new(),
            sink: None,
            actors: actors.max(1),
        }
    }

    pub fn with_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn elapsed(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64())
    }

    pub fn handle(&mut self, ev: Event) -> std::io::Result<()> {
        match ev {
            Event::Actor { actor, steps, episodes } => {
                self.totals.env_steps += steps;
                self.window.env_steps += steps;
                *self.per_actor.entry(actor).or_default() += steps;
                for e in episodes {
                    self.totals.episodes += 1;
                    self.window.returns.push(e.ret);
                    if episode_success(&e, self.kind, self.objects) {
                        self.window.successes += 1;
                    }
                    self.episodes.push(e);
                }
                if self.totals.env_steps >= self.next_emit {
                    self.emit()?;
                    while self.next_emit <= self.totals.env_steps {
                        self.next_emit += self.cadence;
                    }
                }
            }
            Event::Learner {
                agent_steps,
                idle_secs,
                busy_secs,
                losses,
            } => {
                self.totals.learner_steps += agent_steps;
                self.totals.learner_updates += 1;
                self.totals.learner_idle_secs += idle_secs;
                self.totals.learner_busy_secs += busy_secs;
                let w = &mut self.window;
                w.learner_steps += agent_steps;
                w.idle += idle_secs;
                w.busy += busy_secs;
                w.loss_sum.total += losses.total;
                w.loss_sum.policy += losses.policy;
                w.loss_sum.value += losses.value;
                w.loss_sum.entropy += losses.entropy;
                w.loss_sum.kl += losses.kl;
                w.loss_n += 1;
            }
            Event::Distill { agent_steps, stats } => {
                self.totals.distill_steps += agent_steps;
                self.totals.distill_updates += 1;
                let w = &mut self.window;
                w.distill_sum.total += stats.total;
                w.distill_sum.policy += stats.policy;
                w.distill_sum.value += stats.value;
                w.distill_n += 1;
            }
            Event::Runner { batches, stale } => {
                self.totals.batches_annotated += batches;
                self.totals.stale_annotations += stale;
            }
        }
        Ok(())
    }

    fn emit(&mut self) -> std::io::Result<()> {
        let now = self.elapsed();
        let dt = now - self.last_time;
        self.last_time = now;
        let w = std::mem::take(&mut self.window);
        let rate = |n: u64| if dt > 0.0 { n as f64 / dt } else { 0.0 };
        let n_ep = w.returns.len();
        let mean = |s: f64, n: u64| s / n as f64;
        let rec = MetricsRecord {
            time: now,
            env_steps: self.totals.env_steps,
            learner_steps: self.totals.learner_steps,
            distill_steps: self.totals.distill_steps,
            learner_updates: self.totals.learner_updates,
            distill_updates: self.totals.distill_updates,
            actor_sps: rate(w.env_steps) / self.actors as f64,
            learner_sps: rate(w.learner_steps),
            learner_idle: (w.idle + w.busy > 0.0).then(|| w.idle / (w.idle + w.busy)),
            dprl_ratio: (self.totals.learner_steps > 0)
                .then(|| self.totals.distill_steps as f64 / self.totals.learner_steps as f64),
            episodes: self.totals.episodes,
            mean_return: (n_ep > 0).then(|| w.returns.iter().sum::<f64>() / n_ep as f64),
            success_rate: (n_ep > 0).then(|| w.successes as f64 / n_ep as f64),
            loss: (w.loss_n > 0).then(|| LearnerLosses {
                total: mean(w.loss_sum.total, w.loss_n),
                policy: mean(w.loss_sum.policy, w.loss_n),
                value: mean(w.loss_sum.value, w.loss_n),
                entropy: mean(w.loss_sum.entropy, w.loss_n),
                kl: mean(w.loss_sum.kl, w.loss_n),
            }),
            distill_loss: (w.distill_n > 0).then(|| DistillStats {
                total: mean(w.distill_sum.total, w.distill_n),
                policy: mean(w.distill_sum.policy, w.distill_n),
                value: mean(w.distill_sum.value, w.distill_n),
            }),
            stale_annotations: self.totals.stale_annotations,
        };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &rec)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Emits a closing record when steps happened since the last one.
    pub fn finish(&mut self) -> std::io::Result<()> {
        let last = self.records.last().map_or(0, |r| r.env_steps);
        if self.totals.env_steps > last {
            self.emit()?;
        }
        Ok(())
    }
}

/// First environment step at which a record's success rate reached `threshold`.
pub fn steps_to_threshold(records: &[MetricsRecord], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.success_rate.is_some_and(|s| s >= threshold))
        .map(|r| r.env_steps)
}
