use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Parameters bound lazily onto one graph: a tensor becomes a leaf the first
/// time it is requested, so unused parameters never receive gradient.
pub struct BoundParams<'p> {
    store: &'p ParamStore,
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'p> BoundParams<'p> {
    pub fn new(store: &'p ParamStore, trainable: bool) -> Self {
        Self {
            store,
            vars: BTreeMap::new(),
            trainable,
        }
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        let v = g.leaf(t.clone(), self.trainable);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var` for `name` instead of a fresh leaf, e.g. to route a
    /// perturbed copy through the same forward code.
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    /// Names of parameters touched by the forward pass.
    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    /// Gradients for every bound parameter.
    pub fn collect(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|t| (name.clone(), t)))
            .collect()
    }
}
