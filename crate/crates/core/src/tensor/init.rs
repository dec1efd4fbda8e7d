//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Real, Tensor};

/// `U(-1/√fan_in, 1/√fan_in)` for a `[fan_in, fan_out]` matrix.
pub fn fan_in_uniform<S: Real>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..fan_in * fan_out).map(|_| S::of(dist.sample(rng))).collect();
    Tensor::new(&[fan_in, fan_out], data).expect("shape")
}

/// Matrix with orthonormal rows or columns (whichever is smaller), via
/// modified Gram-Schmidt on a Gaussian sample.
pub fn orthogonal<S: Real>(rng: &mut impl Rng, rows: usize, cols: usize, gain: f64) -> Tensor<S> {
    // Orthonormalize along the longer side: build `k` vectors of length `n`.
    let (k, n, transpose) = if rows <= cols {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while vecs.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut data = vec![S::zero(); rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            data[r * cols + c] = S::of(gain * x);
        }
    }
    Tensor::new(&[rows, cols], data).expect("shape")
}
