//! Randomized finite-difference instances shared by the gradient tests and
//! the acceptance suite.

#![allow(dead_code)]

pub mod invariants;

use ald::distill::{ald_loss, distill_loss, policy_distill_loss, value_distill_loss, DistillBatch, DistillConfig};
use ald::models::gradcheck::{check, GradCheck};
use ald::models::lstm::LstmState;
use ald::models::{
    AgentNet, CoreConfig, Gtrxl, GtrxlConfig, GtrxlMemory, Lstm, LstmConfig, ModelError, ParamSet, PopArt, Positional,
    SeqState, TowerConfig,
};
use ald::rl::{actor_critic_loss, kl_divergence, learner_kl_regularizer, RlConfig};
use ald::tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng8 = ChaCha8Rng;

pub fn randn(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

fn flags(rng: &mut impl Rng, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(p)).collect()
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any output into a scalar.
fn project(g: &mut Graph<f64>, out: NodeId, r: &Tensor<f64>) -> NodeId {
    let c = g.constant(r.clone());
    let m = g.mul(out, c).unwrap();
    g.sum(m)
}

/// Adds random jitter so parameters are not at their structured init.
fn jitter(ps: &mut ParamSet<f64>, rng: &mut impl Rng, scale: f64) {
    for i in 0..ps.len() {
        for x in ps.get_mut(i).data_mut() {
            *x += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

const PER_BLOCK: usize = 3;

pub fn lstm_instance(rng: &mut Rng8) -> GradCheck {
    let (inp, hid) = (rng.gen_range(1..5), rng.gen_range(1..6));
    let (t, b) = (rng.gen_range(1..5), rng.gen_range(1..4));
    let mut ps = ParamSet::new();
    let lstm = Lstm::new(
        &mut ps,
        rng,
        "lstm",
        LstmConfig {
            input_dim: inp,
            hidden_dim: hid,
        },
    )
    .unwrap();
    jitter(&mut ps, rng, 0.1);
    let xi = ps.push("x", randn(rng, &[t * b, inp], 1.0));
    let first = flags(rng, t * b, 0.2);
    let init: Vec<LstmState<f64>> = (0..b)
        .map(|_| LstmState {
            h: randn(rng, &[hid], 0.5).into_data(),
            c: randn(rng, &[hid], 0.5).into_data(),
        })
        .collect();
    let r = randn(rng, &[t * b, hid], 1.0);
    check(&ps, PER_BLOCK, rng, |g, p| {
        let (f, _) = lstm.unroll(g, p, p.id(xi), t, b, &first, &init, t)?;
        Ok::<_, ModelError>(project(g, f, &r))
    })
    .unwrap()
}

pub fn tiny_gtrxl(rng: &mut impl Rng, positional: Positional) -> GtrxlConfig {
    let heads = rng.gen_range(1..3);
    let head_dim = rng.gen_range(1..4);
    GtrxlConfig {
        layers: rng.gen_range(1..3),
        embed_dim: rng.gen_range(2..6),
        heads,
        head_dim,
        ff_dim: rng.gen_range(2..6),
        gate_bias: rng.gen_range(-1.0..2.0),
        mem_len: rng.gen_range(0..5),
        positional,
        shared_positional: rng.gen_bool(0.5),
        max_segment: 16,
    }
}

fn gtrxl_instance(rng: &mut Rng8, positional: Positional) -> GradCheck {
    let cfg = tiny_gtrxl(rng, positional);
    let (t, b) = (rng.gen_range(1..4), rng.gen_range(1..3));
    let mut ps = ParamSet::new();
    let net = Gtrxl::new(&mut ps, rng, "gtrxl", cfg).unwrap();
    jitter(&mut ps, rng, 0.1);
    // fill the memory with a previous segment
    let warm = randn(rng, &[t * b, cfg.embed_dim], 1.0);
    let mems = {
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let x = g.constant(warm);
        let empty = vec![GtrxlMemory::empty(&cfg); b];
        net.forward(&mut g, &p, x, t, b, &flags(rng, t * b, 0.2), &empty, t)
            .unwrap()
            .1
    };
    let xi = ps.push("x", randn(rng, &[t * b, cfg.embed_dim], 1.0));
    let first = flags(rng, t * b, 0.2);
    let r = randn(rng, &[t * b, cfg.embed_dim], 1.0);
    check(&ps, PER_BLOCK, rng, |g, p| {
        let (y, _) = net.forward(g, p, p.id(xi), t, b, &first, &mems, t)?;
        Ok::<_, ModelError>(project(g, y, &r))
    })
    .unwrap()
}

pub fn gtrxl_relative_instance(rng: &mut Rng8) -> GradCheck {
    gtrxl_instance(rng, Positional::Relative)
}

pub fn gtrxl_absolute_instance(rng: &mut Rng8) -> GradCheck {
    gtrxl_instance(rng, Positional::Absolute)
}

fn random_memory(net: &AgentNet, rng: &mut impl Rng) -> Vec<SeqState<f64>> {
    net.initial_memory::<f64>()
        .into_iter()
        .map(|s| match s {
            SeqState::Lstm(st) => SeqState::Lstm(LstmState {
                h: randn(rng, &[st.h.len()], 0.5).into_data(),
                c: randn(rng, &[st.c.len()], 0.5).into_data(),
            }),
            other => other,
        })
        .collect()
}

fn agent(rng: &mut Rng8, towers: &[TowerConfig], obs_dim: usize, actions: usize) -> (AgentNet, ParamSet<f64>) {
    let mut ps = ParamSet::new();
    let net = AgentNet::new(&mut ps, rng, obs_dim, actions, towers).unwrap();
    jitter(&mut ps, rng, 0.1);
    (net, ps)
}

pub fn agent_instance(rng: &mut Rng8) -> GradCheck {
    let (obs_dim, actions) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let towers = match rng.gen_range(0..3) {
        0 => vec![TowerConfig::full(
            "actor",
            CoreConfig::Lstm {
                hidden: rng.gen_range(1..5),
            },
        )],
        1 => vec![TowerConfig::full(
            "learner",
            CoreConfig::Gtrxl(tiny_gtrxl(rng, Positional::Relative)),
        )],
        _ => vec![
            TowerConfig {
                value: false,
                ..TowerConfig::full(
                    "pi",
                    CoreConfig::Lstm {
                        hidden: rng.gen_range(1..5),
                    },
                )
            },
            TowerConfig {
                policy: false,
                ..TowerConfig::full("v", CoreConfig::Gtrxl(tiny_gtrxl(rng, Positional::Relative)))
            },
        ],
    };
    let (net, ps) = agent(rng, &towers, obs_dim, actions);
    let (t, b) = (rng.gen_range(1..4), rng.gen_range(1..3));
    let obs = randn(rng, &[t * b, obs_dim], 1.0);
    let first = flags(rng, t * b, 0.2);
    let mems: Vec<_> = (0..b).map(|_| random_memory(&net, rng)).collect();
    let rl = randn(rng, &[t * b, actions], 1.0);
    let rv = randn(rng, &[t * b, 1], 1.0);
    check(&ps, PER_BLOCK, rng, |g, p| {
        let (out, _) = net.forward(g, p, obs.clone(), t, b, &first, &mems, t)?;
        let a = project(g, out.logits, &rl);
        let v = project(g, out.value.unwrap(), &rv);
        Ok::<_, ModelError>(g.add(a, v)?)
    })
    .unwrap()
}

/// One trainable logits block and a constant target of the same shape
/// (the target side of every distillation-style loss is detached).
fn logits_and_target(rng: &mut Rng8, scale: f64) -> (ParamSet<f64>, Tensor<f64>) {
    let (n, a) = (rng.gen_range(1..6), rng.gen_range(2..6));
    let mut ps = ParamSet::new();
    ps.push("p", randn(rng, &[n, a], scale));
    let target = randn(rng, &[n, a], scale);
    (ps, target)
}

fn logits_pair(rng: &mut Rng8, scale: f64) -> (ParamSet<f64>, usize, usize) {
    let (n, a) = (rng.gen_range(1..6), rng.gen_range(2..6));
    let mut ps = ParamSet::new();
    let p = ps.push("p", randn(rng, &[n, a], scale));
    let q = ps.push("q", randn(rng, &[n, a], scale));
    (ps, p, q)
}

pub fn policy_distill_instance(rng: &mut Rng8) -> GradCheck {
    let (ps, target) = logits_and_target(rng, 2.0);
    check(&ps, 8, rng, |g, b| {
        let q = g.constant(target.clone());
        policy_distill_loss(g, b.id(0), q)
    })
    .unwrap()
}

pub fn value_distill_instance(rng: &mut Rng8) -> GradCheck {
    let n = rng.gen_range(1..8);
    let mut ps = ParamSet::new();
    let a = ps.push("actor", randn(rng, &[n, 1], 1.0));
    let target = randn(rng, &[n, 1], 1.0);
    check(&ps, 8, rng, |g, b| {
        let l = g.constant(target.clone());
        value_distill_loss(g, b.id(a), l)
    })
    .unwrap()
}

/// The combined distillation loss through a full actor network.
pub fn ald_instance(rng: &mut Rng8) -> GradCheck {
    let (obs_dim, actions) = (rng.gen_range(1..5), rng.gen_range(2..5));
    let hidden = rng.gen_range(1..5);
    let (net, ps) = agent(
        rng,
        &[TowerConfig::full("actor", CoreConfig::Lstm { hidden })],
        obs_dim,
        actions,
    );
    let (t, b) = (rng.gen_range(1..4), rng.gen_range(1..3));
    let batch = DistillBatch {
        t,
        b,
        obs: randn(rng, &[t * b, obs_dim], 1.0),
        first: flags(rng, t * b, 0.2),
        memories: (0..b).map(|_| random_memory(&net, rng)).collect(),
        learner_logits: randn(rng, &[t * b, actions], 2.0),
        learner_values: randn(rng, &[t * b], 3.0).into_data(),
    };
    let stats = PopArt::with_stats(rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0));
    let cfg = DistillConfig {
        alpha_pi: rng.gen_range(0.1..2.0),
        alpha_v: rng.gen_range(0.0..2.0),
    };
    check(&ps, PER_BLOCK, rng, |g, p| {
        distill_loss(g, &net, p, &batch, &stats, &cfg).map(|l| l.total)
    })
    .unwrap()
}

/// Linear combination of the two distillation terms.
pub fn ald_combination_instance(rng: &mut Rng8) -> GradCheck {
    let (mut ps, target) = logits_and_target(rng, 2.0);
    let n = target.rows();
    let va = ps.push("va", randn(rng, &[n, 1], 1.0));
    let vt = randn(rng, &[n, 1], 1.0);
    let cfg = DistillConfig {
        alpha_pi: rng.gen_range(0.1..2.0),
        alpha_v: rng.gen_range(0.0..2.0),
    };
    check(&ps, 8, rng, |g, b| {
        let q = g.constant(target.clone());
        let vl = g.constant(vt.clone());
        let pl = policy_distill_loss(g, b.id(0), q)?;
        let vlz = value_distill_loss(g, b.id(va), vl)?;
        ald_loss(g, pl, vlz, &cfg)
    })
    .unwrap()
}

pub fn actor_critic_instance(rng: &mut Rng8) -> GradCheck {
    let (n, a) = (rng.gen_range(1..8), rng.gen_range(2..6));
    let mut ps = ParamSet::new();
    let li = ps.push("logits", randn(rng, &[n, a], 2.0));
    let vi = ps.push("values", randn(rng, &[n, 1], 1.0));
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..a)).collect();
    let targets = randn(rng, &[n], 1.0).into_data();
    let adv = randn(rng, &[n], 1.0).into_data();
    let cfg = RlConfig {
        entropy_coef: rng.gen_range(0.0..0.1),
        value_coef: rng.gen_range(0.1..1.0),
        ..RlConfig::default()
    };
    check(&ps, 8, rng, |g, b| {
        actor_critic_loss(g, b.id(li), b.id(vi), &actions, &targets, &adv, &cfg).map(|l| l.total)
    })
    .unwrap()
}

pub fn learner_kl_instance(rng: &mut Rng8) -> GradCheck {
    let (ps, behaviour) = logits_and_target(rng, 2.0);
    check(&ps, 8, rng, |g, b| {
        let beh = g.constant(behaviour.clone());
        learner_kl_regularizer(g, beh, b.id(0))
    })
    .unwrap()
}

pub fn kl_instance(rng: &mut Rng8) -> GradCheck {
    let (ps, p, q) = logits_pair(rng, 2.0);
    check(&ps, 8, rng, |g, b| kl_divergence(g, b.id(p), b.id(q))).unwrap()
}

pub type Instance = fn(&mut Rng8) -> GradCheck;

pub const TARGETS: &[(&str, Instance)] = &[
    ("lstm", lstm_instance),
    ("gtrxl-relative", gtrxl_relative_instance),
    ("gtrxl-absolute", gtrxl_absolute_instance),
    ("agent-net", agent_instance),
    ("policy-distill", policy_distill_instance),
    ("value-distill", value_distill_instance),
    ("ald-combined", ald_combination_instance),
    ("ald-through-actor", ald_instance),
    ("actor-critic", actor_critic_instance),
    ("learner-kl", learner_kl_instance),
    ("kl", kl_instance),
];

/// Runs `instances` seeded instances of every target.
pub fn run_gradient_suite(instances: u64) -> Vec<(&'static str, GradCheck)> {
    TARGETS
        .iter()
        .map(|&(name, f)| {
            let total = (0..instances).fold(GradCheck::default(), |acc, i| {
                let mut rng = Rng8::seed_from_u64(i);
                acc.merge(f(&mut rng))
            });
            (name, total)
        })
        .collect()
}
