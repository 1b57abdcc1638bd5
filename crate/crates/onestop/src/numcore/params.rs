use std::collections::HashMap;

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle into a [`Params`] store. Models hold these instead of tensors so
/// the optimizer can address every trainable array by a stable index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors. Values are immutable `Tensor`s;
/// updating a parameter swaps the whole tensor (the optimizer does this once
/// per step, so the copy is part of the update anyway).
#[derive(Clone, Debug)]
pub struct Params<S: Scalar> {
    entries: Vec<(String, Tensor<S>)>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> Default for Params<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique name and returns its handle.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push((name, value));
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].1
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<S>) {
        assert_eq!(
            self.entries[id.0].1.shape(),
            value.shape(),
            "parameter {} shape changed",
            self.entries[id.0].0
        );
        self.entries[id.0].1 = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar elements across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy with a single element nudged — the finite-difference harness
    /// rebuilds losses around these.
    pub fn with_perturbed(&self, id: ParamId, index: usize, delta: S) -> Params<S> {
        let mut out = self.clone();
        out.entries[id.0].1 = out.entries[id.0].1.perturbed(index, delta);
        out
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        let mut out = Params::new();
        for (name, t) in &self.entries {
            out.add(name.clone(), t.cast::<T>());
        }
        out
    }
}
