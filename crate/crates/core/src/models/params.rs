use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::{Graph, NodeId, Real, Tensor};

use super::ModelError;

/// Ordered, named parameter blocks. Blocks are reference counted so binding
/// them into a graph and taking snapshots is cheap; mutation is
/// copy-on-write.
#[derive(Clone, Debug)]
pub struct ParamSet<S> {
    names: Vec<String>,
    blocks: Vec<Arc<Tensor<S>>>,
    index: HashMap<String, usize>,
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            blocks: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<S>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter block `{name}`");
        self.index.insert(name.clone(), self.blocks.len());
        self.names.push(name);
        self.blocks.push(Arc::new(value));
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, i: usize) -> &Tensor<S> {
        &self.blocks[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.blocks[i])
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).map(|i| self.get(i))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.numel()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.blocks.iter().map(|b| &**b))
    }

    /// Binds every block as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        Bound(self.blocks.iter().map(|b| g.param(Arc::clone(b))).collect())
    }

    /// Binds every block as a constant (inference, or frozen targets).
    pub fn bind_frozen(&self, g: &mut Graph<S>) -> Bound {
        Bound(self.blocks.iter().map(|b| g.shared(Arc::clone(b), false)).collect())
    }

    /// Replaces block `i` keeping its shape.
    pub fn set(&mut self, i: usize, value: Tensor<S>) -> Result<(), ModelError> {
        if value.shape() != self.blocks[i].shape() {
            return Err(ModelError::ParamShape {
                name: self.names[i].clone(),
                expected: self.blocks[i].shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        self.blocks[i] = Arc::new(value);
        Ok(())
    }

    /// Copies every block of `src` whose name exists here.
    pub fn copy_matching(&mut self, src: &ParamSet<S>) -> Result<usize, ModelError> {
        let mut n = 0;
        for (name, t) in src.iter() {
            if let Some(i) = self.index_of(name) {
                self.set(i, t.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn apply_deltas(&mut self, deltas: &[Vec<S>]) {
        for (i, d) in deltas.iter().enumerate() {
            let block = self.get_mut(i);
            block.data_mut().iter_mut().zip(d).for_each(|(x, &dx)| *x += dx);
        }
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.push(name, t.cast());
        }
        out
    }

    /// Flat concatenation of all blocks in order.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.total_len());
        for b in &self.blocks {
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[S]) -> Result<(), ModelError> {
        if flat.len() != self.total_len() {
            return Err(ModelError::Mismatch(format!(
                "flat parameter vector has {} values, expected {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for i in 0..self.len() {
            let block = self.get_mut(i);
            let n = block.numel();
            block.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Graph node ids of a bound [`ParamSet`], indexed like the set.
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<NodeId>);

impl Bound {
    pub fn id(&self, i: usize) -> NodeId {
        self.0[i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }
}

impl std::ops::Index<usize> for Bound {
    type Output = NodeId;

    fn index(&self, i: usize) -> &NodeId {
        &self.0[i]
    }
}
