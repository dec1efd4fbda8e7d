//! Single-layer LSTM core.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{init, Graph, NodeId, Real, Tensor};

use super::{Bound, ModelError, ParamSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// `(h, c)` for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<S> {
    pub h: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Real> LstmState<S> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![S::zero(); hidden],
            c: vec![S::zero(); hidden],
        }
    }
}

/// Gate layout along the `4H` axis: input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub cfg: LstmConfig,
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
}

impl Lstm {
    pub fn new<S: Real>(ps: &mut ParamSet<S>, rng: &mut impl Rng, name: &str, cfg: LstmConfig) -> Result<Self> {
        if cfg.hidden_dim == 0 || cfg.input_dim == 0 {
            return Err(ModelError::Mismatch(format!("LSTM dims must be positive: {cfg:?}")));
        }
        let h = cfg.hidden_dim;
        let wx = ps.push(format!("{name}.wx"), init::fan_in_uniform(rng, cfg.input_dim, 4 * h));
        // Recurrent weights: one orthogonal block per gate.
        let mut wh = Tensor::<S>::zeros(&[h, 4 * h]);
        for gate in 0..4 {
            let q = init::orthogonal::<S>(rng, h, h, 1.0);
            for r in 0..h {
                wh.data_mut()[r * 4 * h + gate * h..r * 4 * h + (gate + 1) * h]
                    .copy_from_slice(&q.data()[r * h..(r + 1) * h]);
            }
        }
        let wh = ps.push(format!("{name}.wh"), wh);
        let b = ps.push(format!("{name}.b"), Tensor::zeros(&[4 * h]));
        Ok(Lstm { cfg, wx, wh, b })
    }

    pub fn check_state<S: Real>(&self, states: &[LstmState<S>]) -> Result<()> {
        for s in states {
            if s.h.len() != self.cfg.hidden_dim || s.c.len() != self.cfg.hidden_dim {
                return Err(ModelError::Mismatch(format!(
                    "LSTM state of width {}/{} for hidden dim {}",
                    s.h.len(),
                    s.c.len(),
                    self.cfg.hidden_dim
                )));
            }
        }
        Ok(())
    }

    /// Runs `t` steps over a batch of `b` sequences laid out time-major in
    /// `x:[t·b, input]`. `first[t·b + i]` zeroes sequence `i`'s state before
    /// step `t`. Returns features `[t·b, hidden]` and the state of every
    /// sequence after `carry_len` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn unroll<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        x: NodeId,
        t: usize,
        b: usize,
        first: &[bool],
        init_state: &[LstmState<S>],
        carry_len: usize,
    ) -> Result<(NodeId, Vec<LstmState<S>>)> {
        let hd = self.cfg.hidden_dim;
        if t == 0 {
            return Err(ModelError::Mismatch("LSTM unroll needs at least one step".into()));
        }
        if init_state.len() != b || first.len() != t * b || g.value(x).rows() != t * b {
            return Err(ModelError::Mismatch(format!(
                "LSTM unroll: {} states, {} reset flags, {} input rows for t={t}, b={b}",
                init_state.len(),
                first.len(),
                g.value(x).rows()
            )));
        }
        if g.value(x).cols() != self.cfg.input_dim {
            return Err(ModelError::Mismatch(format!(
                "LSTM input width {} for input dim {}",
                g.value(x).cols(),
                self.cfg.input_dim
            )));
        }
        self.check_state(init_state)?;
        let stack = |f: &dyn Fn(&LstmState<S>) -> &Vec<S>| {
            let mut d = Vec::with_capacity(b * hd);
            for s in init_state {
                d.extend_from_slice(f(s));
            }
            Tensor::new(&[b, hd], d).expect("shape")
        };
        let mut h = g.constant(stack(&|s| &s.h));
        let mut c = g.constant(stack(&|s| &s.c));
        let mut outs = Vec::with_capacity(t);
        let mut carry = init_state.to_vec();
        for step in 0..t {
            let flags = &first[step * b..(step + 1) * b];
            if flags.iter().any(|&f| f) {
                let mut m = Vec::with_capacity(b * hd);
                for &f in flags {
                    m.extend(std::iter::repeat_n(if f { S::zero() } else { S::one() }, hd));
                }
                let mask = g.constant(Tensor::new(&[b, hd], m)?);
                h = g.mul(h, mask)?;
                c = g.mul(c, mask)?;
            }
            let xt = g.slice_rows(x, step * b, (step + 1) * b)?;
            let zx = g.matmul(xt, p[self.wx])?;
            let zh = g.matmul(h, p[self.wh])?;
            let z = g.add(zx, zh)?;
            let z = g.add(z, p[self.b])?;
            let i_pre = g.slice_cols(z, 0, hd)?;
            let f_pre = g.slice_cols(z, hd, 2 * hd)?;
            let g_pre = g.slice_cols(z, 2 * hd, 3 * hd)?;
            let o_pre = g.slice_cols(z, 3 * hd, 4 * hd)?;
            let ig = g.sigmoid(i_pre);
            let fg = g.sigmoid(f_pre);
            let cand = g.tanh(g_pre);
            let og = g.sigmoid(o_pre);
            let keep = g.mul(fg, c)?;
            let write = g.mul(ig, cand)?;
            c = g.add(keep, write)?;
            let ct = g.tanh(c);
            h = g.mul(og, ct)?;
            outs.push(h);
            if step + 1 == carry_len {
                let (hv, cv) = (g.value(h).data(), g.value(c).data());
                carry = (0..b)
                    .map(|i| LstmState {
                        h: hv[i * hd..(i + 1) * hd].to_vec(),
                        c: cv[i * hd..(i + 1) * hd].to_vec(),
                    })
                    .collect();
            }
        }
        let features = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_rows(&outs)?
        };
        Ok((features, carry))
    }
}
