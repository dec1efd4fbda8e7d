//! Wiring of the roles: a threaded runtime and a deterministic
//! single-threaded scheduler over the same components.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::config::ExperimentConfig;
use crate::models::{AgentNet, ParamSet, PopArt};
use crate::trajectory::Trajectory;

use super::actor::{Actor, NetPolicy};
use super::distiller::{DistillShared, DistillWorker};
use super::learner::{Learner, LearnerRunner};
use super::metrics::{Collector, EpisodeRecord, Event, MetricsRecord, Totals};
use super::replay::{Batch, Replay};
use super::{build_models, Batcher, Dprl, Mode, Models, ParamStore, PipelineError, Result};

/// Data-flow counters; every emitted trajectory ends up in exactly one batch
/// or in the final partial remainder, and every annotated batch reaches both
/// the learner and the replay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub trajectories_emitted: u64,
    pub trajectories_batched: u64,
    pub trajectories_unbatched: u64,
    pub batches_formed: u64,
    pub batches_annotated: u64,
    pub batches_learned: u64,
    pub batches_replayed: u64,
}

impl Conservation {
    pub fn balanced(&self) -> bool {
        self.trajectories_emitted == self.trajectories_batched + self.trajectories_unbatched
            && self.batches_formed == self.batches_annotated
            && self.batches_annotated == self.batches_learned
            && self.batches_annotated == self.batches_replayed
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub totals: Totals,
    pub per_actor_steps: BTreeMap<u32, u64>,
    pub episodes: Vec<EpisodeRecord>,
    pub conservation: Conservation,
    pub wall_secs: f64,
    /// Transformer inferences executed by actors (zero whenever only a small
    /// recurrent model acts).
    pub actor_transformer_calls: u64,
    pub learner_store_version: u64,
    pub actor_store_version: u64,
    pub learner_popart: PopArt,
    pub dprl_ratio: Option<f64>,
    /// Acting network with its final published parameters.
    #[serde(skip)]
    pub actor_model: Option<(AgentNet, Arc<ParamSet<f32>>)>,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 step to decorrelate streams
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct System {
    models: Models,
    learner_store: Arc<ParamStore>,
    actor_store: Arc<ParamStore>,
    distill: Arc<DistillShared>,
    replay: Arc<Replay>,
    dprl: Arc<Dprl>,
}

fn setup(cfg: &ExperimentConfig) -> Result<System> {
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let models = build_models(
        cfg.mode,
        &cfg.env,
        cfg.models.actor_core(&cfg.env),
        cfg.models.learner_core(),
        derive_seed(cfg.seed, 1),
    )?;
    let learner_store = Arc::new(ParamStore::new(&models.learner_params, PopArt::default()));
    let actor_store = Arc::new(ParamStore::new(&models.actor_params, PopArt::default()));
    let distill = Arc::new(DistillShared::new(Arc::clone(&actor_store), cfg.pipeline.k_a));
    let dprl_mode = if cfg.mode == Mode::Ald {
        cfg.pipeline.dprl
    } else {
        super::DprlMode::Free
    };
    Ok(System {
        learner_store,
        actor_store,
        distill,
        replay: Arc::new(Replay::new(cfg.pipeline.replay_capacity)),
        dprl: Arc::new(Dprl::new(dprl_mode, cfg.pipeline.batch_agent_steps())),
        models,
    })
}

fn make_learner(cfg: &ExperimentConfig, sys: &System) -> Learner {
    let sync = (cfg.mode != Mode::Ald).then(|| (Arc::clone(&sys.actor_store), sys.models.actor_params.clone()));
    let beta = if cfg.mode == Mode::Ald { cfg.rl.beta_l } else { 0.0 };
    Learner::new(
        sys.models.learner.clone(),
        sys.models.learner_params.clone(),
        Arc::clone(&sys.learner_store),
        sync,
        cfg.rl,
        beta,
        &cfg.optim,
        cfg.pipeline.k_l,
    )
}

fn make_actor(cfg: &ExperimentConfig, sys: &System, id: usize) -> Result<Actor<NetPolicy>> {
    let env = cfg.env.build(derive_seed(cfg.env.seed, 100 + id as u64))?;
    let policy = NetPolicy::new(sys.models.actor.clone(), Arc::clone(&sys.actor_store));
    Ok(Actor::new(
        id as u32,
        env,
        policy,
        cfg.pipeline.unroll,
        derive_seed(cfg.seed, 1000 + id as u64),
    ))
}

fn distillers(cfg: &ExperimentConfig) -> usize {
    if cfg.mode == Mode::Ald {
        cfg.pipeline.distillers
    } else {
        0
    }
}

fn reached(collector: &Collector, target: Option<f64>) -> bool {
    let last = collector.records.last().and_then(|r| r.success_rate);
    matches!((target, last), (Some(t), Some(s)) if s >= t)
}

/// Reserves one segment of the environment-step budget.
fn reserve(counter: &AtomicU64, unroll: u64, budget: u64) -> bool {
    counter.fetch_add(unroll, Ordering::AcqRel) < budget
}

/// Runs every role on its own thread until the environment-step budget is
/// spent.
pub fn run_threaded(cfg: &ExperimentConfig, sink: Option<Box<dyn Write + Send>>) -> Result<RunOutcome> {
    let sys = setup(cfg)?;
    let start = Instant::now();
    let pc = cfg.pipeline;
    let mut collector = Collector::new(cfg.metrics_every, cfg.env.kind, cfg.env.objects, pc.actors, true);
    if let Some(s) = sink {
        collector = collector.with_sink(s);
    }
    let (ev_tx, ev_rx) = unbounded::<Event>();
    let (traj_tx, traj_rx) = bounded::<Trajectory>(pc.channel_depth * pc.batch);
    let (batch_tx, batch_rx) = bounded::<Vec<Trajectory>>(pc.channel_depth);
    let (learn_tx, learn_rx) = bounded::<Batch>(pc.channel_depth);
    let reserved = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let emitted = Arc::new(AtomicU64::new(0));

    // reaching the success target only ends reservations, so the pipeline drains
    let halt = Arc::new(AtomicBool::new(false));
    let target = cfg.stop_at_success;
    let collector_halt = Arc::clone(&halt);
    let collector_h = thread::spawn(move || -> std::io::Result<Collector> {
        for ev in ev_rx {
            collector.handle(ev)?;
            if reached(&collector, target) {
                collector_halt.store(true, Ordering::Release);
            }
        }
        collector.finish()?;
        Ok(collector)
    });

    let mut actor_hs = Vec::new();
    for id in 0..pc.actors {
        let mut actor = make_actor(cfg, &sys, id)?;
        let (tx, ev, reserved, emitted, stop, halt) = (
            traj_tx.clone(),
            ev_tx.clone(),
            Arc::clone(&reserved),
            Arc::clone(&emitted),
            Arc::clone(&stop),
            Arc::clone(&halt),
        );
        let budget = cfg.env_steps;
        actor_hs.push(thread::spawn(move || -> Result<u64> {
            while !stop.load(Ordering::Acquire)
                && !halt.load(Ordering::Acquire)
                && reserve(&reserved, actor.t_u as u64, budget)
            {
                let (tr, episodes) = actor.unroll()?;
                let _ = ev.send(Event::Actor {
                    actor: actor.id,
                    steps: tr.len() as u64,
                    episodes,
                });
                emitted.fetch_add(1, Ordering::AcqRel);
                if tx.send(tr).is_err() {
                    break;
                }
            }
            Ok(actor.policy.transformer_calls)
        }));
    }
    drop(traj_tx);

    let queue_h = thread::spawn(move || -> (u64, u64, u64) {
        let mut batcher = Batcher::new(pc.batch);
        for tr in traj_rx {
            if let Some(b) = batcher.push(tr) {
                if batch_tx.send(b).is_err() {
                    break;
                }
            }
        }
        (batcher.received, batcher.batches, batcher.pending() as u64)
    });

    let runner_h = {
        let mut runner = LearnerRunner::new(
            sys.models.learner.clone(),
            Arc::clone(&sys.learner_store),
            Some(Arc::clone(&sys.actor_store)),
            pc.staleness_bound,
        );
        let (replay, ev, stop) = (Arc::clone(&sys.replay), ev_tx.clone(), Arc::clone(&stop));
        thread::spawn(move || -> Result<(u64, u64)> {
            let mut replayed = 0;
            for mut b in batch_rx {
                let stale = match runner.annotate(&mut b) {
                    Ok(s) => s,
                    Err(e) => {
                        stop.store(true, Ordering::Release);
                        return Err(e);
                    }
                };
                let _ = ev.send(Event::Runner { batches: 1, stale });
                let b = Arc::new(b);
                replay.push(Arc::clone(&b));
                replayed += 1;
                if learn_tx.send(b).is_err() {
                    break;
                }
            }
            Ok((runner.batches, replayed))
        })
    };

    let mut distill_hs = Vec::new();
    for id in 0..distillers(cfg) {
        let mut worker = DistillWorker::new(id, sys.models.actor.clone(), &sys.distill, cfg.distill, &cfg.optim);
        let (shared, replay, dprl, stop, ev) = (
            Arc::clone(&sys.distill),
            Arc::clone(&sys.replay),
            Arc::clone(&sys.dprl),
            Arc::clone(&stop),
            ev_tx.clone(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5000 + id as u64));
        let steps = pc.batch_agent_steps();
        distill_hs.push(thread::spawn(move || -> Result<()> {
            while dprl.wait_distill(&stop) {
                let Some(batch) = replay.sample(&mut rng, &stop) else {
                    break;
                };
                let st = worker.step(&shared, &batch)?;
                dprl.record_distill(steps);
                let _ = ev.send(Event::Distill {
                    agent_steps: steps,
                    stats: st,
                });
            }
            Ok(())
        }));
    }

    let learner_h = {
        let mut learner = make_learner(cfg, &sys);
        let (dprl, stop, ev, replay) = (
            Arc::clone(&sys.dprl),
            Arc::clone(&stop),
            ev_tx.clone(),
            Arc::clone(&sys.replay),
        );
        let learner_replay = pc.learner_replay;
        let seed = derive_seed(cfg.seed, 7);
        thread::spawn(move || -> Result<(u64, Learner)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut learned = 0;
            loop {
                let wait = Instant::now();
                let Ok(batch) = learn_rx.recv() else { break };
                let idle = wait.elapsed().as_secs_f64();
                if !dprl.wait_learner(&stop) {
                    break;
                }
                let busy_start = Instant::now();
                let losses = match learner.step(&batch) {
                    Ok(l) => l,
                    Err(e) => {
                        stop.store(true, Ordering::Release);
                        return Err(e);
                    }
                };
                learned += 1;
                let n = (batch.len() * batch[0].len()) as u64;
                dprl.record_learner(n);
                if learner_replay {
                    if let Some(extra) = replay.try_sample(&mut rng) {
                        learner.step(&extra)?;
                    }
                }
                let _ = ev.send(Event::Learner {
                    agent_steps: n,
                    idle_secs: idle,
                    busy_secs: busy_start.elapsed().as_secs_f64(),
                    losses,
                });
            }
            Ok((learned, learner))
        })
    };
    drop(ev_tx);

    let mut first_err: Option<PipelineError> = None;
    let mut note = |r: Result<()>| {
        if let Err(e) = r {
            stop.store(true, Ordering::Release);
            first_err.get_or_insert(e);
        }
    };
    let mut learner_calls = 0;
    for h in actor_hs {
        match h.join().map_err(|_| PipelineError::Role("actor panicked".into()))? {
            Ok(c) => learner_calls += c,
            Err(e) => note(Err(e)),
        }
    }
    let (received, formed, unbatched) = queue_h
        .join()
        .map_err(|_| PipelineError::Role("queue panicked".into()))?;
    let (annotated, replayed) = match runner_h
        .join()
        .map_err(|_| PipelineError::Role("runner panicked".into()))?
    {
        Ok(v) => v,
        Err(e) => {
            note(Err(e));
            (0, 0)
        }
    };
    let learner_result = learner_h
        .join()
        .map_err(|_| PipelineError::Role("learner panicked".into()))?;
    stop.store(true, Ordering::Release);
    sys.replay.wake_all();
    sys.dprl.wake_all();
    for h in distill_hs {
        note(
            h.join()
                .map_err(|_| PipelineError::Role("distill worker panicked".into()))?,
        );
    }
    let (learned, learner) = match learner_result {
        Ok(v) => v,
        Err(e) => return Err(first_err.unwrap_or(e)),
    };
    if let Some(e) = first_err {
        return Err(e);
    }
    let collector = collector_h
        .join()
        .map_err(|_| PipelineError::Role("collector panicked".into()))??;
    let conservation = Conservation {
        trajectories_emitted: emitted.load(Ordering::Acquire),
        trajectories_batched: received - unbatched,
        trajectories_unbatched: unbatched,
        batches_formed: formed,
        batches_annotated: annotated,
        batches_learned: learned,
        batches_replayed: replayed,
    };
    Ok(outcome(collector, conservation, start, learner_calls, &sys, &learner))
}

fn outcome(
    collector: Collector,
    conservation: Conservation,
    start: Instant,
    learner_calls: u64,
    sys: &System,
    learner: &Learner,
) -> RunOutcome {
    RunOutcome {
        records: collector.records,
        totals: collector.totals,
        per_actor_steps: collector.per_actor,
        episodes: collector.episodes,
        conservation,
        wall_secs: start.elapsed().as_secs_f64(),
        actor_transformer_calls: learner_calls,
        learner_store_version: sys.learner_store.version(),
        actor_store_version: sys.actor_store.version(),
        learner_popart: learner.popart,
        dprl_ratio: sys.dprl.ratio(),
        actor_model: Some((sys.models.actor.clone(), sys.actor_store.snapshot().params)),
    }
}

/// Single-threaded round-robin schedule. Actors take turns producing one
/// segment each; every full batch is annotated, replayed and learned on at
/// once, followed by distill steps: as many as the fixed DpRL ratio allows, or
/// one per learner step in free-running mode. Metric time fields use a logical
/// clock, so seeded runs give identical metric streams.
pub fn run_deterministic(cfg: &ExperimentConfig, sink: Option<Box<dyn Write + Send>>) -> Result<RunOutcome> {
    let sys = setup(cfg)?;
    let start = Instant::now();
    let pc = cfg.pipeline;
    let mut collector = Collector::new(cfg.metrics_every, cfg.env.kind, cfg.env.objects, pc.actors, false);
    if let Some(s) = sink {
        collector = collector.with_sink(s);
    }
    let mut actors = (0..pc.actors)
        .map(|id| make_actor(cfg, &sys, id))
        .collect::<Result<Vec<_>>>()?;
    let mut runner = LearnerRunner::new(
        sys.models.learner.clone(),
        Arc::clone(&sys.learner_store),
        Some(Arc::clone(&sys.actor_store)),
        pc.staleness_bound,
    );
    let mut learner = make_learner(cfg, &sys);
    let mut workers: Vec<DistillWorker> = (0..distillers(cfg).min(1))
        .map(|id| DistillWorker::new(id, sys.models.actor.clone(), &sys.distill, cfg.distill, &cfg.optim))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5000));
    let mut batcher = Batcher::new(pc.batch);
    let mut c = Conservation::default();
    let steps = pc.batch_agent_steps();
    let reserved = AtomicU64::new(0);
    'outer: loop {
        for actor in actors.iter_mut() {
            if reached(&collector, cfg.stop_at_success) || !reserve(&reserved, actor.t_u as u64, cfg.env_steps) {
                break 'outer;
            }
            let (tr, episodes) = actor.unroll()?;
            c.trajectories_emitted += 1;
            collector.handle(Event::Actor {
                actor: actor.id,
                steps: tr.len() as u64,
                episodes,
            })?;
            let Some(mut batch) = batcher.push(tr) else { continue };
            c.batches_formed += 1;
            let stale = runner.annotate(&mut batch)?;
            c.batches_annotated += 1;
            collector.handle(Event::Runner { batches: 1, stale })?;
            let batch = Arc::new(batch);
            sys.replay.push(Arc::clone(&batch));
            c.batches_replayed += 1;
            let losses = learner.step(&batch)?;
            c.batches_learned += 1;
            sys.dprl.record_learner(steps);
            if pc.learner_replay {
                if let Some(extra) = sys.replay.try_sample(&mut rng) {
                    learner.step(&extra)?;
                }
            }
            collector.handle(Event::Learner {
                agent_steps: steps,
                idle_secs: 0.0,
                busy_secs: 0.0,
                losses,
            })?;
            if let Some(worker) = workers.first_mut() {
                let mut budget = match sys.dprl.mode() {
                    super::DprlMode::Free => 1,
                    super::DprlMode::Fixed(_) => usize::MAX,
                };
                while budget > 0 && sys.dprl.distill_may_run() {
                    budget -= 1;
                    let sample = sys
                        .replay
                        .try_sample(&mut rng)
                        .expect("replay holds the batch just pushed");
                    let st = worker.step(&sys.distill, &sample)?;
                    sys.dprl.record_distill(steps);
                    collector.handle(Event::Distill {
                        agent_steps: steps,
                        stats: st,
                    })?;
                }
            }
        }
    }
    collector.finish()?;
    c.trajectories_batched = batcher.received - batcher.pending() as u64;
    c.trajectories_unbatched = batcher.pending() as u64;
    let calls = actors.iter().map(|a| a.policy.transformer_calls).sum();
    Ok(outcome(collector, c, start, calls, &sys, &learner))
}

/// Sends `items` through a bounded channel; helper for tests of back-pressure.
pub fn pump<T: Send + 'static>(items: Vec<T>, depth: usize) -> (Receiver<T>, thread::JoinHandle<()>) {
    let (tx, rx): (Sender<T>, Receiver<T>) = bounded(depth);
    let h = thread::spawn(move || {
        for it in items {
            if tx.send(it).is_err() {
                break;
            }
        }
    });
    (rx, h)
}
