//! Measured model, head and environment invariants. Each function returns
//! the observed worst case so callers can assert or report it.

use ald::distill::{policy_distill_loss, value_distill_loss};
use ald::envs::metafetch::MetaFetch;
use ald::envs::oracle::fetch_path;
use ald::envs::Dir;
use ald::models::{AgentNet, CoreConfig, Gtrxl, GtrxlConfig, GtrxlMemory, ParamSet, PopArt, Positional, TowerConfig};
use ald::rl::learner_kl_regularizer;
use ald::tensor::{Graph, Tensor};
use rand::Rng;
use rand::SeedableRng;

use super::{randn, Rng8};

fn config(rng: &mut Rng8, positional: Positional, mem_len: usize) -> GtrxlConfig {
    GtrxlConfig {
        layers: rng.gen_range(1..=3),
        embed_dim: 8,
        heads: 2,
        head_dim: 4,
        ff_dim: 12,
        gate_bias: 2.0,
        mem_len,
        positional,
        shared_positional: false,
        max_segment: 16,
    }
}

fn run(
    m: &Gtrxl,
    ps: &ParamSet<f64>,
    x: &Tensor<f64>,
    first: &[bool],
    mem: &GtrxlMemory<f64>,
) -> (Vec<f64>, GtrxlMemory<f64>) {
    let mut g = Graph::new();
    let p = ps.bind(&mut g);
    let xn = g.constant(x.clone());
    let t = first.len();
    let (y, mut next) = m
        .forward(&mut g, &p, xn, t, 1, first, std::slice::from_ref(mem), t)
        .unwrap();
    (g.value(y).data().to_vec(), next.pop().unwrap())
}

fn rows(x: &Tensor<f64>, from: usize, to: usize) -> Tensor<f64> {
    let e = x.cols();
    Tensor::new(&[to - from, e], x.data()[from * e..to * e].to_vec()).unwrap()
}

/// Perturbing the input at position `s` must leave every earlier output
/// untouched, and nothing before an episode start may reach outputs after it.
/// Returns the largest change seen where none is allowed, and the smallest
/// change of the output at the perturbed position itself (a control that
/// must stay clearly positive).
pub fn gtrxl_causality(instances: u64) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut control = f64::INFINITY;
    for seed in 0..instances {
        let mut rng = Rng8::seed_from_u64(seed);
        let positional = if seed % 2 == 0 {
            Positional::Relative
        } else {
            Positional::Absolute
        };
        let mem_len = rng.gen_range(0..6);
        let cfg = config(&mut rng, positional, mem_len);
        let mut ps = ParamSet::new();
        let m = Gtrxl::new(&mut ps, &mut rng, "tx", cfg).unwrap();
        let t = rng.gen_range(2..8);
        let warm = randn(&mut rng, &[3, 8], 1.0);
        let (_, mem) = run(&m, &ps, &warm, &[false; 3], &GtrxlMemory::empty(&cfg));
        let x = randn(&mut rng, &[t, 8], 1.0);
        let (base, _) = run(&m, &ps, &x, &vec![false; t], &mem);
        for s in 0..t {
            let mut xp = x.clone();
            xp.data_mut()[s * 8..(s + 1) * 8]
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-3.0..3.0));
            let (y, _) = run(&m, &ps, &xp, &vec![false; t], &mem);
            for i in 0..s * 8 {
                worst = worst.max((y[i] - base[i]).abs());
            }
            let own = (s * 8..(s + 1) * 8).map(|i| (y[i] - base[i]).abs()).fold(0.0, f64::max);
            control = control.min(own);
        }
        // episode start at k: perturb memory and every earlier position
        let k = rng.gen_range(1..t);
        let mut first = vec![false; t];
        first[k] = true;
        let (base, _) = run(&m, &ps, &x, &first, &mem);
        let mut xp = x.clone();
        xp.data_mut()[..k * 8]
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-3.0..3.0));
        let mut other = mem.clone();
        for l in &mut other.layers {
            l.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
        }
        let (y, _) = run(&m, &ps, &xp, &first, &other);
        for i in k * 8..t * 8 {
            worst = worst.max((y[i] - base[i]).abs());
        }
    }
    (worst, control)
}

/// One long segment versus the same inputs fed as chained shorter segments,
/// with random episode starts. The memory is long enough to hold everything
/// before the last segment, so with `carry` the two must agree. Without
/// `carry` every segment starts from empty memory, a control that must differ.
pub fn gtrxl_chaining(instances: u64, positional: Positional, carry: bool) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = Rng8::seed_from_u64(1000 + seed);
        let pieces: Vec<usize> = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(1..5)).collect();
        let total: usize = pieces.iter().sum();
        let mem_len = total - pieces.last().unwrap();
        let cfg = config(&mut rng, positional, mem_len);
        let mut ps = ParamSet::new();
        let m = Gtrxl::new(&mut ps, &mut rng, "tx", cfg).unwrap();
        let x = randn(&mut rng, &[total, 8], 1.0);
        let first: Vec<bool> = (0..total).map(|i| i > 0 && rng.gen_bool(0.15)).collect();
        let (whole, _) = run(&m, &ps, &x, &first, &GtrxlMemory::empty(&cfg));
        let mut mem = GtrxlMemory::empty(&cfg);
        let mut at = 0;
        for &n in &pieces {
            let (y, next) = run(&m, &ps, &rows(&x, at, at + n), &first[at..at + n], &mem);
            for (a, b) in y.iter().zip(&whole[at * 8..(at + n) * 8]) {
                worst = worst.max((a - b).abs());
            }
            mem = if carry { next } else { GtrxlMemory::empty(&cfg) };
            at += n;
        }
    }
    worst
}

/// Largest relative change of a denormalized value prediction across one
/// statistics update, over `updates` random updates of a value head.
pub fn popart_preservation(updates: usize) -> f64 {
    let mut rng = Rng8::seed_from_u64(77);
    let mut ps = ParamSet::<f64>::new();
    let net = AgentNet::new(
        &mut ps,
        &mut rng,
        5,
        3,
        &[TowerConfig::full("v", CoreConfig::Lstm { hidden: 6 })],
    )
    .unwrap();
    let obs = randn(&mut rng, &[4, 5], 1.0);
    let predict = |ps: &ParamSet<f64>, stats: &PopArt| -> Vec<f64> {
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let mems = vec![net.initial_memory(); 4];
        let (out, _) = net
            .forward(&mut g, &p, obs.clone(), 1, 4, &[true; 4], &mems, 1)
            .unwrap();
        g.value(out.value.unwrap())
            .data()
            .iter()
            .map(|&v| stats.denormalize(v))
            .collect()
    };
    let mut stats = PopArt::default();
    let mut worst = 0.0f64;
    for i in 0..updates {
        // drift the target distribution and vary the step size so statistics
        // move by both tiny and large amounts
        stats.decay = [0.0003, 0.01, 0.3][i % 3];
        let centre = 50.0 * (i as f64 / 200.0).sin();
        let spread = rng.gen_range(0.1..30.0);
        let targets: Vec<f64> = (0..8).map(|_| centre + spread * rng.gen_range(-1.0..1.0)).collect();
        let before = predict(&ps, &stats);
        net.popart_update(&mut ps, &mut stats, &targets).unwrap();
        let after = predict(&ps, &stats);
        for (a, b) in after.iter().zip(&before) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-6));
        }
    }
    worst
}

/// The fetch reward rule as worded: the next object in the order pays once
/// per cycle, re-collection does not pay, a wrong object un-collects
/// everything, and finishing the order starts a fresh paying cycle.
pub fn prose_rewards(order: &[usize], touches: &[usize]) -> Vec<f64> {
    let mut collected: Vec<usize> = Vec::new();
    let mut paid: std::collections::HashSet<usize> = Default::default();
    let mut out = Vec::new();
    for &o in touches {
        if collected.contains(&o) {
            out.push(0.0);
        } else if order[collected.len()] == o {
            collected.push(o);
            out.push(if paid.insert(o) { 1.0 } else { 0.0 });
            if collected.len() == order.len() {
                collected.clear();
                paid.clear();
            }
        } else {
            collected.clear();
            out.push(0.0);
        }
    }
    out
}

/// Walks to each object in turn, returning the reward gathered per touch.
pub fn drive(m: &mut MetaFetch, touches: &[usize]) -> Vec<f64> {
    touches
        .iter()
        .map(|&t| {
            let mut r = 0.0;
            for a in fetch_path(m, t) {
                r += m.step(a).unwrap().reward;
            }
            assert_eq!(m.pos, m.objects[t]);
            r
        })
        .collect()
}

/// "Collect 1, 2; wrong; re-collect 1, 2; collect 3" on a fixed layout.
/// Returns the environment's rewards and the prose simulator's.
pub fn fetch_scenario() -> (Vec<f64>, Vec<f64>) {
    let objects = vec![(0, 0), (0, 6), (6, 6), (6, 0)];
    let order = vec![2, 0, 3, 1];
    let mut m = MetaFetch::with_layout((3, 3), Dir::N, objects, order.clone()).unwrap();
    let (o1, o2, o3, wrong) = (order[0], order[1], order[2], order[3]);
    let touches = [o1, o2, wrong, o1, o2, o3];
    (drive(&mut m, &touches), prose_rewards(&order, &touches))
}

/// Non-zero learner-parameter gradient entries left by the distillation
/// losses, plus a flag that the actor side did receive gradient.
pub fn distill_leaks_into_learner(instances: u64) -> (usize, bool) {
    let mut leaks = 0;
    let mut actor_moves = true;
    for seed in 0..instances {
        let mut rng = Rng8::seed_from_u64(seed);
        let mut ps = ParamSet::<f64>::new();
        let core = CoreConfig::Gtrxl(super::tiny_gtrxl(&mut rng, Positional::Relative));
        let learner = AgentNet::new(&mut ps, &mut rng, 3, 4, &[TowerConfig::full("learner", core)]).unwrap();
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let (out, _) = learner
            .forward(
                &mut g,
                &p,
                randn(&mut rng, &[2, 3], 1.0),
                2,
                1,
                &[true, false],
                &[learner.initial_memory()],
                2,
            )
            .unwrap();
        let actor_logits = g.leaf(randn(&mut rng, &[2, 4], 1.0), true);
        let actor_values = g.leaf(randn(&mut rng, &[2, 1], 1.0), true);
        let pl = policy_distill_loss(&mut g, actor_logits, out.logits).unwrap();
        let vl = value_distill_loss(&mut g, actor_values, out.value.unwrap()).unwrap();
        let total = g.add(pl, vl).unwrap();
        let grads = g.backward(total).unwrap();
        for &id in p.ids() {
            leaks += grads.get(id).data().iter().filter(|&&x| x != 0.0).count();
        }
        actor_moves &= grads.get(actor_logits).data().iter().any(|&x| x != 0.0);
    }
    (leaks, actor_moves)
}

/// Non-zero actor-logit gradient entries left by the learner regularizer.
pub fn regularizer_leaks_into_actor(instances: u64) -> usize {
    let mut rng = Rng8::seed_from_u64(1);
    let mut leaks = 0;
    for _ in 0..instances {
        let (n, a) = (rng.gen_range(1..6), rng.gen_range(2..6));
        let mut g = Graph::<f64>::new();
        let actor = g.leaf(randn(&mut rng, &[n, a], 2.0), true);
        let learner = g.leaf(randn(&mut rng, &[n, a], 2.0), true);
        let kl = learner_kl_regularizer(&mut g, actor, learner).unwrap();
        let grads = g.backward(kl).unwrap();
        leaks += grads.get(actor).data().iter().filter(|&&x| x != 0.0).count();
    }
    leaks
}
