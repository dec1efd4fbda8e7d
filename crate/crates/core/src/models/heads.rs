//! Policy and PopArt-normalized value heads.

use serde::{Deserialize, Serialize};

use crate::tensor::Real;

use super::{ModelError, Result};

pub const POPART_DECAY: f64 = 0.0003;
pub const POPART_SIGMA_MIN: f64 = 1e-4;

/// Running first and second moments of value targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopArt {
    pub mu: f64,
    pub nu: f64,
    pub decay: f64,
    pub sigma_min: f64,
    pub steps: u64,
    /// Updates where σ had to be clamped to `sigma_min`.
    pub clamps: u64,
}

impl Default for PopArt {
    fn default() -> Self {
        PopArt::new(POPART_DECAY)
    }
}

impl PopArt {
    pub fn new(decay: f64) -> Self {
        PopArt {
            mu: 0.0,
            nu: 1.0,
            decay,
            sigma_min: POPART_SIGMA_MIN,
            steps: 0,
            clamps: 0,
        }
    }

    pub fn with_stats(mu: f64, sigma: f64) -> Self {
        PopArt {
            mu,
            nu: sigma * sigma + mu * mu,
            ..PopArt::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        (self.nu - self.mu * self.mu)
            .max(self.sigma_min * self.sigma_min)
            .sqrt()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.sigma() * v + self.mu
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma()
    }

    /// Moves the statistics toward the batch moments and rescales the value
    /// head (`weights` of shape `[F, 1]` and its scalar `bias`) so that every
    /// denormalized prediction is unchanged.
    pub fn update<S: Real>(&mut self, weights: &mut [S], bias: &mut S, targets: &[f64]) -> Result<()> {
        if targets.is_empty() {
            return Ok(());
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::Mismatch("non-finite PopArt target".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let mean_sq = targets.iter().map(|t| t * t).sum::<f64>() / n;
        let (old_mu, old_sigma) = (self.mu, self.sigma());
        let beta = self.decay;
        self.mu = (1.0 - beta) * self.mu + beta * mean;
        self.nu = (1.0 - beta) * self.nu + beta * mean_sq;
        if self.nu - self.mu * self.mu < self.sigma_min * self.sigma_min {
            self.nu = self.mu * self.mu + self.sigma_min * self.sigma_min;
            self.clamps += 1;
        }
        self.steps += 1;
        let new_sigma = self.sigma();
        let ratio = old_sigma / new_sigma;
        for w in weights.iter_mut() {
            *w = S::of(w.f64() * ratio);
        }
        *bias = S::of((old_sigma * bias.f64() + old_mu - self.mu) / new_sigma);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn predict(p: &PopArt, w: &[f64], b: f64, f: &[f64]) -> f64 {
        p.denormalize(w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + b)
    }

    #[test]
    fn identity_stats() {
        let p = PopArt::default();
        assert_eq!(p.denormalize(0.37), 0.37);
        let q = PopArt::with_stats(5.0, 2.0);
        assert!((q.denormalize(1.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn decay_applied_to_mean() {
        let mut p = PopArt::with_stats(1.0, 1.0);
        let (mut w, mut b) = (vec![0.5f64], 0.0f64);
        p.update(&mut w, &mut b, &[3.0, 5.0]).unwrap();
        let expected = (1.0 - 0.0003) * 1.0 + 0.0003 * 4.0;
        assert!((p.mu - expected).abs() < 1e-15);
    }

    #[test]
    fn stationary_targets_are_noop() {
        let mut p = PopArt::with_stats(2.0, 1.0);
        let (mut w, mut b) = (vec![0.3f64, -0.2], 0.1f64);
        // targets with mean μ and second moment ν leave both unchanged
        p.update(&mut w, &mut b, &[1.0, 3.0]).unwrap();
        assert!((p.mu - 2.0).abs() < 1e-12 && (p.sigma() - 1.0).abs() < 1e-12);
        assert!((w[0] - 0.3).abs() < 1e-12 && (b - 0.1).abs() < 1e-12);
    }

    #[test]
    fn preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = PopArt::with_stats(0.5, 1.5);
        p.decay = 0.3; // large decay makes the check meaningful
        let mut w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b = rng.gen_range(-1.0..1.0);
        for _ in 0..50 {
            let feats: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let before: Vec<f64> = feats.iter().map(|f| predict(&p, &w, b, f)).collect();
            let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(-20.0..40.0)).collect();
            p.update(&mut w, &mut b, &targets).unwrap();
            for (f, old) in feats.iter().zip(before) {
                let new = predict(&p, &w, b, f);
                assert!((new - old).abs() <= 1e-9 * old.abs().max(1.0));
            }
        }
    }

    #[test]
    fn clamps_sigma() {
        let mut p = PopArt::with_stats(0.0, 1.0);
        p.decay = 1.0;
        let (mut w, mut b) = (vec![1.0f64], 0.0f64);
        p.update(&mut w, &mut b, &[4.0, 4.0]).unwrap();
        assert_eq!(p.clamps, 1);
        assert!((p.sigma() / POPART_SIGMA_MIN - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = PopArt::default();
        let (mut w, mut b) = (vec![1.0f32], 0.0f32);
        assert!(p.update(&mut w, &mut b, &[f64::NAN]).is_err());
    }
}
