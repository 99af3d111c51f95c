//! Flat storage of named trainable arrays.
//!
//! All model parameters live in one contiguous buffer; the optimizer,
//! checkpointing, finite-difference probes and per-tape leaf registration
//! all address the same layout.

use super::shape::Shape;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Shape,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.numel()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Shape, init: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(init.len(), shape.numel(), "init length for {name}");
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let offset = self.data.len();
        self.data.extend_from_slice(&init);
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let (offset, len) = {
            let e = &self.entries[id.0];
            (e.offset, e.len())
        };
        &mut self.data[offset..offset + len]
    }

    /// Flat range of `id` in the shared buffer.
    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let e = &self.entries[id.0];
        e.offset..e.offset + e.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn total_len(&self) -> usize {
        self.data.len()
    }

    /// Registers every entry as a tape leaf, in entry order. The returned
    /// handles line up with `entries()`, so gradients extracted after a
    /// backward pass can be scattered back into a flat buffer.
    pub fn register_leaves<'t>(&self, tape: &'t Tape) -> Result<Vec<Var<'t>>> {
        self.entries
            .iter()
            .map(|e| tape.leaf(self.data[e.offset..e.offset + e.len()].to_vec(), e.shape))
            .collect()
    }

    /// Collects gradients for leaves created by [`register_leaves`] into a
    /// buffer aligned with the flat parameter layout.
    pub fn collect_grads(&self, tape: &Tape, leaves: &[Var<'_>]) -> Result<Vec<f64>> {
        if leaves.len() != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} leaves, got {}",
                self.entries.len(),
                leaves.len()
            )));
        }
        let mut out = vec![0.0; self.data.len()];
        for (e, leaf) in self.entries.iter().zip(leaves) {
            let g = tape.grad(*leaf);
            out[e.offset..e.offset + e.len()].copy_from_slice(&g);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_named() {
        let mut set = ParamSet::new();
        let a = set.register("w", Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let b = set.register("b", Shape::Vector(2), vec![5.0, 6.0]);
        assert_eq!(set.total_len(), 6);
        assert_eq!(set.slice(a), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(set.range(b), 4..6);
        assert_eq!(set.find("b"), Some(b));
        assert!(set.find("missing").is_none());
    }

    #[test]
    fn leaf_roundtrip_collects_grads_in_layout_order() {
        let mut set = ParamSet::new();
        let a = set.register("x", Shape::Scalar, vec![2.0]);
        set.register("unused", Shape::Scalar, vec![9.0]);
        let tape = Tape::new();
        let leaves = set.register_leaves(&tape).unwrap();
        let y = leaves[a.0].mul(leaves[a.0]).unwrap();
        tape.backward(y).unwrap();
        let grads = set.collect_grads(&tape, &leaves).unwrap();
        assert_eq!(grads, vec![4.0, 0.0]);
    }
}
