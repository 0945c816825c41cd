//! Named parameter storage shared by every model component.
//!
//! Parameters live here between steps; each training step copies them onto a
//! fresh tape as leaves, runs forward/backward, and pulls gradients back out
//! by name. Names are hierarchical strings like `tabular.step0.glu1.w`.

use super::scalar::Real;
use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        assert!(
            self.params.insert(name.to_string(), t).is_none(),
            "duplicate parameter {}",
            name
        );
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Marks a parameter (by exact name) as frozen. Frozen parameters enter
    /// tapes as constants and are invisible to the optimizer.
    pub fn freeze(&mut self, name: &str) {
        assert!(self.params.contains_key(name), "freezing unknown {}", name);
        self.frozen.insert(name.to_string());
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let hits: Vec<String> = self
            .params
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        assert!(!hits.is_empty(), "freeze_prefix {} matched nothing", prefix);
        self.frozen.extend(hits);
    }

    pub fn clear_frozen(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &String> {
        self.frozen.iter()
    }

    /// Copies every parameter onto the tape. Frozen ones become constants so
    /// the backward pass skips them entirely.
    pub fn leaf_map(&self, tape: &mut Tape<T>) -> BTreeMap<String, Var> {
        let mut vars = BTreeMap::new();
        for (name, tensor) in &self.params {
            let v = if self.frozen.contains(name) {
                tape.constant(tensor.clone())
            } else {
                tape.leaf(tensor.clone())
            };
            vars.insert(name.clone(), v);
        }
        vars
    }

    /// Extracts the gradient for every trainable parameter after a backward
    /// pass. Parameters the loss never touched get explicit zeros so the
    /// optimizer sees a full, deterministic map.
    pub fn grad_map(
        &self,
        vars: &BTreeMap<String, Var>,
        grads: &mut Grads<T>,
    ) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, tensor) in &self.params {
            if self.frozen.contains(name) {
                continue;
            }
            let v = vars[name];
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(&tensor.shape));
            out.insert(name.clone(), g);
        }
        out
    }
}
