use super::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-block first/second moment estimates. No gradient clipping is applied.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Real> AdamState<S> {
    pub fn new(sizes: impl IntoIterator<Item = usize>, cfg: &AdamConfig) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    /// Advances the moments and returns the additive update for every block.
    /// `names` is only used to label errors.
    pub fn deltas(&mut self, grads: &[Tensor<S>], lr: f64, names: &[&str]) -> Result<Vec<Vec<S>>> {
        if grads.len() != self.m.len() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!("{} gradient blocks for {} parameter blocks", grads.len(), self.m.len()),
            });
        }
        if lr <= 0.0 {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!("learning rate must be positive, got {lr}"),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.numel() != self.m[i].len() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    shapes: vec![g.shape().to_vec(), vec![self.m[i].len()]],
                });
            }
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient {
                    index: i,
                    name: names.get(i).copied().unwrap_or("?").to_string(),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (one, eps) = (S::one(), S::of(self.eps));
        let bc1 = S::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = S::of(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::of(lr);
        let mut out = Vec::with_capacity(grads.len());
        for ((g, m), v) in grads.iter().zip(&mut self.m).zip(&mut self.v) {
            let mut d = Vec::with_capacity(g.numel());
            for ((&gi, mi), vi) in g.data().iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                d.push(-lr * mhat / (vhat.sqrt() + eps));
            }
            out.push(d);
        }
        Ok(out)
    }

    /// One Adam step applied in place.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[Tensor<S>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!("{} parameter blocks for {} gradient blocks", params.len(), grads.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.numel() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    shapes: vec![vec![p.len()], g.shape().to_vec()],
                });
            }
        }
        let deltas = self.deltas(grads, lr, &[])?;
        for (p, d) in params.iter_mut().zip(deltas) {
            p.iter_mut().zip(d).for_each(|(x, dx)| *x += dx);
        }
        Ok(())
    }
}
