//! Central finite-difference verification of tape gradients in `f64`.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::{Graph, NodeId, TensorError};

use super::{Bound, ParamSet};

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;
/// One-sided slopes disagreeing by more than this (relative) mark a kink
/// (a ReLU or max crossing inside the step); such coordinates are skipped
/// and counted.
pub const KINK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub coords: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            coords: self.coords + o.coords,
            kinks: self.kinks + o.kinks,
            max_rel_err: self.max_rel_err.max(o.max_rel_err),
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares backprop gradients of a scalar `loss` against central
/// differences on up to `per_block` randomly chosen elements of every block.
pub fn check<R, F, E>(params: &ParamSet<f64>, per_block: usize, rng: &mut R, loss: F) -> Result<GradCheck, E>
where
    R: Rng,
    F: Fn(&mut Graph<f64>, &Bound) -> Result<NodeId, E>,
    E: From<TensorError>,
{
    let eval = |ps: &ParamSet<f64>| -> Result<f64, E> {
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let l = loss(&mut g, &p)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let l = loss(&mut g, &p)?;
    let f0 = g.value(l).item();
    let grads = g.backward(l)?;
    let mut out = GradCheck::default();
    let mut work = params.clone();
    for i in 0..params.len() {
        let n = params.get(i).numel();
        let analytic = grads.get(p.id(i));
        for j in sample(rng, n, per_block.min(n)) {
            let x = params.get(i).data()[j];
            work.get_mut(i).data_mut()[j] = x + STEP;
            let up = eval(&work)?;
            work.get_mut(i).data_mut()[j] = x - STEP;
            let down = eval(&work)?;
            work.get_mut(i).data_mut()[j] = x;
            let (right, left) = ((up - f0) / STEP, (f0 - down) / STEP);
            if rel_err(right, left) > KINK && (right - left).abs() > 10.0 * STEP {
                out.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            out.coords += 1;
            out.max_rel_err = out.max_rel_err.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn detects_a_wrong_gradient() {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let ok = check(&ps, 3, &mut rng, |g, p| {
            let s = g.square(p.id(0));
            Ok::<_, TensorError>(g.sum(s))
        })
        .unwrap();
        assert!(ok.max_rel_err < 1e-8 && ok.coords == 3);
        // a stop-gradient hides the dependence from backprop only
        let bad = check(&ps, 3, &mut rng, |g, p| {
            let s = g.square(p.id(0));
            let s = g.stop_gradient(s);
            let t = g.add(s, p.id(0))?;
            Ok::<_, TensorError>(g.sum(t))
        })
        .unwrap();
        assert!(bad.max_rel_err > 0.1);
    }

    #[test]
    fn kinks_are_skipped_and_counted() {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::new(&[2], vec![2e-6, 0.5]).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = check(&ps, 2, &mut rng, |g, p| {
            let s = g.relu(p.id(0));
            Ok::<_, TensorError>(g.sum(s))
        })
        .unwrap();
        assert_eq!((r.coords, r.kinks), (1, 1));
        assert!(r.max_rel_err < 1e-8);
    }
}
