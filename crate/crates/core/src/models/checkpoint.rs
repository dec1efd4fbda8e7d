//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "ALDCKPT1"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              {"precision":"f32"|"f64","blocks":[{"name","shape","offset","len"}]}
//! payload      concatenated block values, little-endian IEEE-754
//! ```
//!
//! `offset`/`len` count elements, not bytes. Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

use rand::SeedableRng;

use super::{AgentNet, ModelError, ParamSet, TowerConfig};

pub const MAGIC: &[u8; 8] = b"ALDCKPT1";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockHeader {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub precision: String,
    pub blocks: Vec<BlockHeader>,
}

fn write_value<S: Real, W: Write>(w: &mut W, x: S) -> std::io::Result<()> {
    match S::NAME {
        "f32" => w.write_all(&(x.f64() as f32).to_bits().to_le_bytes()),
        _ => w.write_all(&x.f64().to_bits().to_le_bytes()),
    }
}

pub fn write_checkpoint<S: Real, W: Write>(w: &mut W, params: &ParamSet<S>) -> Result<(), ModelError> {
    let mut blocks = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        blocks.push(BlockHeader {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let header = CheckpointHeader {
        precision: S::NAME.to_string(),
        blocks,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params.iter() {
        for &x in t.data() {
            write_value(w, x)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<S: Real, R: Read>(r: &mut R) -> Result<ParamSet<S>, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.precision != S::NAME {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint precision {} does not match requested {}",
            header.precision,
            S::NAME
        )));
    }
    let width = if S::NAME == "f32" { 4 } else { 8 };
    let total: usize = header.blocks.iter().map(|b| b.len).sum();
    let mut payload = vec![0u8; total * width];
    r.read_exact(&mut payload)?;
    let values: Vec<S> = payload
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                S::of(f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())) as f64)
            } else {
                S::of(f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            }
        })
        .collect();
    let mut out = ParamSet::new();
    for b in &header.blocks {
        if b.offset + b.len > values.len() || b.shape.iter().product::<usize>() != b.len {
            return Err(ModelError::Checkpoint(format!("corrupt block `{}`", b.name)));
        }
        let t = Tensor::new(&b.shape, values[b.offset..b.offset + b.len].to_vec())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        out.push(b.name.clone(), t);
    }
    Ok(out)
}

pub fn save<S: Real>(path: &Path, params: &ParamSet<S>) -> Result<(), ModelError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load<S: Real>(path: &Path) -> Result<ParamSet<S>, ModelError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

/// Architecture needed to rebuild a network around its checkpoint. Stored
/// as JSON next to the checkpoint with the extension `json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub obs_dim: usize,
    pub num_actions: usize,
    pub towers: Vec<TowerConfig>,
}

impl ModelSpec {
    pub fn of(net: &AgentNet) -> Self {
        ModelSpec {
            obs_dim: net.obs_dim,
            num_actions: net.num_actions,
            towers: net.tower_configs(),
        }
    }
}

pub fn save_model(path: &Path, net: &AgentNet, params: &ParamSet<f32>) -> Result<(), ModelError> {
    save(path, params)?;
    let spec = serde_json::to_vec_pretty(&ModelSpec::of(net)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path.with_extension("json"), spec)?;
    Ok(())
}

/// Rebuilds the network described by the sidecar spec and fills every block
/// from the checkpoint. Missing or extra blocks are errors.
pub fn load_model(path: &Path) -> Result<(AgentNet, ParamSet<f32>), ModelError> {
    let spec: ModelSpec = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)
        .map_err(|e| ModelError::Checkpoint(format!("model spec: {e}")))?;
    let stored = load::<f32>(path)?;
    let mut params = ParamSet::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let net = AgentNet::new(&mut params, &mut rng, spec.obs_dim, spec.num_actions, &spec.towers)?;
    if stored.len() != params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} blocks, model expects {}",
            stored.len(),
            params.len()
        )));
    }
    let copied = params.copy_matching(&stored)?;
    if copied != params.len() {
        return Err(ModelError::Checkpoint(
            "checkpoint block names do not match the model".into(),
        ));
    }
    Ok((net, params))
}
