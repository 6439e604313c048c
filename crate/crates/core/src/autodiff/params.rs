//! Named parameter store with deterministic iteration order.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hierarchically named trainable tensors (`module/submodule/param`).
/// Iteration is always lexicographic, so optimizer sweeps and checkpoint
/// layouts are reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<f32>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::Data(format!("duplicate parameter name {name}")));
        }
        self.map.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.map.get(name).ok_or_else(|| Error::Data(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.map.get_mut(name).ok_or_else(|| Error::Data(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn total_scalars(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}
