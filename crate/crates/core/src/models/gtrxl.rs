//! Gated Transformer-XL core.
//!
//! Each layer is
//!
//! ```text
//! y  = RelMHA(LN([mem; x]))          queries from the segment only
//! x' = Gate(x, ReLU(y · Wo))
//! x''= Gate(x', ReLU(FF(LN(x'))))
//! ```
//!
//! with a GRU-style gate `Gate(x, y) = x + z ⊙ (ĥ − x)`,
//! `r = σ(y·Wr + x·Ur)`, `z = σ(y·Wz + x·Uz − b_g)`,
//! `ĥ = tanh(y·Wg + (r ⊙ x)·Ug)`. The memory of a layer is its cached input
//! stream (no gradient), so chaining segments reproduces the forward values of
//! one long segment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{init, Graph, NodeId, Real, Tensor};

use super::{Bound, Init, LayerNorm, Linear, ModelError, ParamSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    /// Sinusoidal relative distances projected per layer, with learned
    /// content and position biases.
    Relative,
    /// Learned key-position table over the memory+segment window.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtrxlConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub gate_bias: f64,
    pub mem_len: usize,
    pub positional: Positional,
    /// One positional projection and bias set for all layers.
    pub shared_positional: bool,
    /// Longest segment accepted (sizes the absolute position table).
    pub max_segment: usize,
}

impl GtrxlConfig {
    /// Embedding 256, 8 heads of width 32, gate bias 2, memory 64.
    pub fn large(layers: usize) -> Self {
        GtrxlConfig {
            layers,
            embed_dim: 256,
            heads: 8,
            head_dim: 32,
            ff_dim: 256,
            gate_bias: 2.0,
            mem_len: 64,
            positional: Positional::Relative,
            shared_positional: false,
            max_segment: 64,
        }
    }

    /// Desk-scale default: 2 layers, embedding 64, 4 heads of 16, memory 32.
    pub fn desk() -> Self {
        GtrxlConfig {
            layers: 2,
            embed_dim: 64,
            heads: 4,
            head_dim: 16,
            ff_dim: 64,
            gate_bias: 2.0,
            mem_len: 32,
            positional: Positional::Relative,
            shared_positional: false,
            max_segment: 64,
        }
    }

    fn attn_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Per-layer cached input streams plus a validity flag per slot (slots from
/// a finished episode are never attended to).
#[derive(Clone, Debug, PartialEq)]
pub struct GtrxlMemory<S> {
    pub layers: Vec<Tensor<S>>,
    pub valid: Vec<bool>,
}

impl<S: Real> GtrxlMemory<S> {
    pub fn empty(cfg: &GtrxlConfig) -> Self {
        GtrxlMemory {
            layers: (0..cfg.layers).map(|_| Tensor::zeros(&[0, cfg.embed_dim])).collect(),
            valid: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Gate {
    wy: usize,
    ux: usize,
    ug: usize,
    z_bias: usize,
}

impl Gate {
    fn new<S: Real>(ps: &mut ParamSet<S>, rng: &mut impl Rng, name: &str, e: usize, gate_bias: f64) -> Self {
        Gate {
            wy: ps.push(format!("{name}.wy"), init::fan_in_uniform(rng, e, 3 * e)),
            ux: ps.push(format!("{name}.ux"), init::fan_in_uniform(rng, e, 2 * e)),
            ug: ps.push(format!("{name}.ug"), init::fan_in_uniform(rng, e, e)),
            z_bias: ps.push(format!("{name}.z_bias"), Tensor::full(&[e], S::of(-gate_bias))),
        }
    }

    fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: NodeId, y: NodeId, e: usize) -> Result<NodeId> {
        let yy = g.matmul(y, p[self.wy])?;
        let xx = g.matmul(x, p[self.ux])?;
        let ry = g.slice_cols(yy, 0, e)?;
        let zy = g.slice_cols(yy, e, 2 * e)?;
        let gy = g.slice_cols(yy, 2 * e, 3 * e)?;
        let rx = g.slice_cols(xx, 0, e)?;
        let zx = g.slice_cols(xx, e, 2 * e)?;
        let r = g.add(ry, rx)?;
        let r = g.sigmoid(r);
        let z = g.add(zy, zx)?;
        let z = g.add(z, p[self.z_bias])?;
        let z = g.sigmoid(z);
        let rx = g.mul(r, x)?;
        let hg = g.matmul(rx, p[self.ug])?;
        let h = g.add(gy, hg)?;
        let h = g.tanh(h);
        let d = g.sub(h, x)?;
        let zd = g.mul(z, d)?;
        Ok(g.add(x, zd)?)
    }
}

#[derive(Clone, Debug)]
struct PosParams {
    /// `[E, HD]` projection (relative) or `[window, HD]` table (absolute)
    proj: usize,
    u: usize,
    v: usize,
}

#[derive(Clone, Debug)]
struct Layer {
    ln1: LayerNorm,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: Linear,
    pos: Option<PosParams>,
    gate1: Gate,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    gate2: Gate,
}

#[derive(Clone, Debug)]
pub struct Gtrxl {
    pub cfg: GtrxlConfig,
    layers: Vec<Layer>,
    shared_pos: Option<PosParams>,
}

fn pos_params<S: Real>(ps: &mut ParamSet<S>, rng: &mut impl Rng, name: &str, cfg: &GtrxlConfig) -> PosParams {
    let hd = cfg.attn_dim();
    let proj = match cfg.positional {
        Positional::Relative => init::orthogonal(rng, cfg.embed_dim, hd, 1.0),
        Positional::Absolute => init::fan_in_uniform(rng, cfg.mem_len + cfg.max_segment, hd),
    };
    PosParams {
        proj: ps.push(format!("{name}.proj"), proj),
        u: ps.push(format!("{name}.u"), Tensor::zeros(&[1, hd])),
        v: ps.push(format!("{name}.v"), Tensor::zeros(&[1, hd])),
    }
}

/// `[len, dim]` sinusoidal encoding of distances `0..len`.
pub fn sinusoid<S: Real>(len: usize, dim: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); len * dim];
    for d in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = d as f64 * freq;
            data[d * dim + i] = S::of(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(&[len, dim], data).expect("shape")
}

impl Gtrxl {
    pub fn new<S: Real>(ps: &mut ParamSet<S>, rng: &mut impl Rng, name: &str, cfg: GtrxlConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.embed_dim == 0 || cfg.heads == 0 || cfg.head_dim == 0 || cfg.ff_dim == 0 {
            return Err(ModelError::Mismatch(format!("GTrXL dims must be positive: {cfg:?}")));
        }
        let (e, hd) = (cfg.embed_dim, cfg.attn_dim());
        let shared_pos = cfg
            .shared_positional
            .then(|| pos_params(ps, rng, &format!("{name}.pos"), &cfg));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = format!("{name}.l{l}");
            layers.push(Layer {
                ln1: LayerNorm::new(ps, &format!("{n}.ln1"), e),
                wq: ps.push(format!("{n}.wq"), init::orthogonal(rng, e, hd, 1.0)),
                wk: ps.push(format!("{n}.wk"), init::orthogonal(rng, e, hd, 1.0)),
                wv: ps.push(format!("{n}.wv"), init::orthogonal(rng, e, hd, 1.0)),
                wo: Linear::new(ps, rng, &format!("{n}.wo"), hd, e, Init::Orthogonal),
                pos: (!cfg.shared_positional).then(|| pos_params(ps, rng, &format!("{n}.pos"), &cfg)),
                gate1: Gate::new(ps, rng, &format!("{n}.gate1"), e, cfg.gate_bias),
                ln2: LayerNorm::new(ps, &format!("{n}.ln2"), e),
                ff1: Linear::new(ps, rng, &format!("{n}.ff1"), e, cfg.ff_dim, Init::FanIn),
                ff2: Linear::new(ps, rng, &format!("{n}.ff2"), cfg.ff_dim, e, Init::FanIn),
                gate2: Gate::new(ps, rng, &format!("{n}.gate2"), e, cfg.gate_bias),
            });
        }
        Ok(Gtrxl {
            cfg,
            layers,
            shared_pos,
        })
    }

    /// Names of every sub-layer output projection (attention output and the
    /// second feed-forward matrix, weights and biases).
    pub fn branch_output_blocks(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.wo.w, l.wo.b, l.ff2.w, l.ff2.b])
            .collect()
    }

    /// Gate matrices acting on the residual stream (`Ux`, `Ug`).
    pub fn gate_stream_blocks(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.gate1.ux, l.gate1.ug, l.gate2.ux, l.gate2.ug])
            .collect()
    }

    pub fn check_memory<S: Real>(&self, mem: &GtrxlMemory<S>) -> Result<()> {
        let ok = mem.layers.len() == self.cfg.layers
            && mem.len() <= self.cfg.mem_len
            && mem.layers.iter().all(|t| t.shape() == [mem.len(), self.cfg.embed_dim]);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Mismatch(format!(
                "GTrXL memory with {} layers / {} slots does not fit config {:?}",
                mem.layers.len(),
                mem.len(),
                self.cfg
            )))
        }
    }

    /// Runs `b` time-major sequences of length `t` (`x:[t·b, E]`). Reset flags
    /// and carry semantics match [`super::Lstm::unroll`].
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        x: NodeId,
        t: usize,
        b: usize,
        first: &[bool],
        mems: &[GtrxlMemory<S>],
        carry_len: usize,
    ) -> Result<(NodeId, Vec<GtrxlMemory<S>>)> {
        if t == 0 {
            return Err(ModelError::Mismatch("GTrXL segment must have at least one step".into()));
        }
        if mems.len() != b || first.len() != t * b || g.value(x).rows() != t * b {
            return Err(ModelError::Mismatch(format!(
                "GTrXL forward: {} memories, {} reset flags, {} rows for t={t}, b={b}",
                mems.len(),
                first.len(),
                g.value(x).rows()
            )));
        }
        if g.value(x).cols() != self.cfg.embed_dim {
            return Err(ModelError::Mismatch(format!(
                "GTrXL input width {} for embedding {}",
                g.value(x).cols(),
                self.cfg.embed_dim
            )));
        }
        if t > self.cfg.max_segment {
            return Err(ModelError::Mismatch(format!(
                "segment of {t} exceeds max_segment {}",
                self.cfg.max_segment
            )));
        }
        for m in mems {
            self.check_memory(m)?;
        }
        let mut outs = Vec::with_capacity(b);
        let mut new_mems = Vec::with_capacity(b);
        for (i, mem) in mems.iter().enumerate() {
            let rows: Vec<usize> = (0..t).map(|s| s * b + i).collect();
            let xi = if b == 1 { x } else { g.gather_rows(x, &rows)? };
            let flags: Vec<bool> = rows.iter().map(|&r| first[r]).collect();
            let (o, m) = self.sequence(g, p, xi, &flags, mem, carry_len)?;
            outs.push(o);
            new_mems.push(m);
        }
        if b == 1 {
            return Ok((outs[0], new_mems));
        }
        let stacked = g.concat_rows(&outs)?;
        let order: Vec<usize> = (0..t * b).map(|r| (r % b) * t + r / b).collect();
        Ok((g.gather_rows(stacked, &order)?, new_mems))
    }

    fn sequence<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        x: NodeId,
        first: &[bool],
        mem: &GtrxlMemory<S>,
        carry_len: usize,
    ) -> Result<(NodeId, GtrxlMemory<S>)> {
        let cfg = &self.cfg;
        let (t, lm, e) = (first.len(), mem.len(), cfg.embed_dim);
        let window = lm + t;
        if cfg.positional == Positional::Absolute && window > cfg.mem_len + cfg.max_segment {
            return Err(ModelError::Mismatch(format!("window {window} exceeds position table")));
        }
        // Episode index of each segment position; memory belongs to episode 0.
        let mut ep = Vec::with_capacity(t);
        let mut cur = 0usize;
        for &f in first {
            cur += f as usize;
            ep.push(cur);
        }
        let mut mask = vec![S::neg_infinity(); t * window];
        for i in 0..t {
            for j in 0..window {
                let ok = if j < lm {
                    mem.valid[j] && ep[i] == 0
                } else {
                    let s = j - lm;
                    s <= i && ep[s] == ep[i]
                };
                if ok {
                    mask[i * window + j] = S::zero();
                }
            }
        }
        let mask = Tensor::new(&[t, window], mask)?;
        let rel_idx: Vec<Option<usize>> = (0..t)
            .flat_map(|i| (0..window).map(move |j| (j <= lm + i).then(|| i * window + (lm + i - j))))
            .collect();
        let sinus = match cfg.positional {
            Positional::Relative => Some(g.constant(sinusoid(window, e))),
            Positional::Absolute => None,
        };

        let mut h = x;
        let mut stream_inputs = Vec::with_capacity(cfg.layers);
        for (l, layer) in self.layers.iter().enumerate() {
            stream_inputs.push(g.value(h).clone());
            let full = if lm == 0 {
                h
            } else {
                let m = g.constant(mem.layers[l].clone());
                g.concat_rows(&[m, h])?
            };
            let normed = layer.ln1.forward(g, p, full)?;
            let qin = if lm == 0 {
                normed
            } else {
                g.slice_rows(normed, lm, window)?
            };
            let q = g.matmul(qin, p[layer.wq])?;
            let k = g.matmul(normed, p[layer.wk])?;
            let v = g.matmul(normed, p[layer.wv])?;
            let pos = layer
                .pos
                .as_ref()
                .or(self.shared_pos.as_ref())
                .expect("positional params");
            let r = match sinus {
                Some(sn) => g.matmul(sn, p[pos.proj])?,
                None => g.slice_rows(p[pos.proj], 0, window)?,
            };
            let mut heads = Vec::with_capacity(cfg.heads);
            for hh in 0..cfg.heads {
                let (a, z) = (hh * cfg.head_dim, (hh + 1) * cfg.head_dim);
                let qh = g.slice_cols(q, a, z)?;
                let kh = g.slice_cols(k, a, z)?;
                let vh = g.slice_cols(v, a, z)?;
                let rh = g.slice_cols(r, a, z)?;
                let uh = g.slice_cols(p[pos.u], a, z)?;
                let vb = g.slice_cols(p[pos.v], a, z)?;
                let qu = g.add(qh, uh)?;
                let qv = g.add(qh, vb)?;
                let pq = g.matmul_nt(qv, rh)?;
                let bias = match cfg.positional {
                    Positional::Relative => g.gather(pq, rel_idx.clone(), &[t, window])?,
                    Positional::Absolute => pq,
                };
                heads.push(g.attention(qu, kh, vh, Some(bias), &mask)?);
            }
            let att = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            };
            let y = layer.wo.forward(g, p, att)?;
            let y = g.relu(y);
            let h1 = layer.gate1.forward(g, p, h, y, e)?;
            let n2 = layer.ln2.forward(g, p, h1)?;
            let f = layer.ff1.forward(g, p, n2)?;
            let f = g.relu(f);
            let f = layer.ff2.forward(g, p, f)?;
            let f = g.relu(f);
            h = layer.gate2.forward(g, p, h1, f, e)?;
        }

        let new_mem = if carry_len == 0 || cfg.mem_len == 0 {
            if cfg.mem_len == 0 {
                GtrxlMemory::empty(cfg)
            } else {
                mem.clone()
            }
        } else {
            let keep = carry_len.min(t);
            let ep_c = ep[keep - 1];
            let mut valid: Vec<bool> = mem.valid.iter().map(|&v| v && ep_c == 0).collect();
            valid.extend((0..keep).map(|s| ep[s] == ep_c));
            let total = lm + keep;
            let start = total.saturating_sub(cfg.mem_len);
            let layers = stream_inputs
                .iter()
                .zip(&mem.layers)
                .map(|(seg, old)| {
                    let mut d = Vec::with_capacity((total - start) * e);
                    for row in start..total {
                        if row < lm {
                            d.extend_from_slice(&old.data()[row * e..(row + 1) * e]);
                        } else {
                            let s = row - lm;
                            d.extend_from_slice(&seg.data()[s * e..(s + 1) * e]);
                        }
                    }
                    Tensor::new(&[total - start, e], d).expect("shape")
                })
                .collect();
            GtrxlMemory {
                layers,
                valid: valid[start..].to_vec(),
            }
        };
        Ok((h, new_mem))
    }
}
