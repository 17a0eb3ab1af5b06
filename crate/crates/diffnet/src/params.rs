use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors plus a JSON layout descriptor.
///
/// Names are kept sorted so iteration, persistence and optimizer state are
/// all deterministic. Gradients use the same type with a null layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    pub layout: Value,
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new(layout: Value) -> Self {
        Self { layout, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Moves every tensor of `other` into this set under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: ParameterSet) {
        for (name, t) in other.tensors {
            self.tensors.insert(format!("{prefix}{name}"), t);
        }
    }

    /// Copy with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        Self {
            layout: Value::Null,
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect(),
        }
    }

    /// Global L2 norm over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales in place so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.tensors.values_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    pub fn to_container(&self, kind: &str, mut meta: Value) -> Container {
        if !meta.is_object() {
            meta = json!({});
        }
        meta["layout"] = self.layout.clone();
        let mut c = Container::new(kind, meta);
        for (name, t) in &self.tensors {
            c.push(name.clone(), t.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Self {
        let layout = c.meta.get("layout").cloned().unwrap_or(Value::Null);
        let mut set = Self::new(layout);
        for (name, t) in &c.tensors {
            set.insert(name, t.clone());
        }
        set
    }

    pub fn save(&self, path: impl AsRef<Path>, kind: &str, meta: Value) -> Result<()> {
        self.to_container(kind, meta).write(path)
    }

    /// Loads a set, checking the container kind. Returns the set and the full metadata.
    pub fn load(path: impl AsRef<Path>, kind: &str) -> Result<(Self, Value)> {
        let c = Container::read(path)?;
        c.expect_kind(kind)?;
        Ok((Self::from_container(&c), c.meta))
    }
}
