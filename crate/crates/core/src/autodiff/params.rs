use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::error::AutodiffError;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Registry of named trainable leaf tensors. Names are unique; ids are
/// assigned in registration order and never reused.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.tensors[id.0].shape(), value.shape(), "parameter shape is fixed");
        self.tensors[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Number of scalar values across the given parameters.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    pub fn snapshot(&self, ids: &[ParamId]) -> Vec<Tensor<T>> {
        ids.iter().map(|&id| self.get(id).clone()).collect()
    }

    pub fn restore(&mut self, ids: &[ParamId], values: &[Tensor<T>]) {
        for (&id, v) in ids.iter().zip(values) {
            self.set(id, v.clone());
        }
    }

    /// Same registry converted to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            by_name: self.by_name.clone(),
        }
    }
}
