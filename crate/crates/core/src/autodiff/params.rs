use std::collections::HashMap;

use rand::Rng;

use super::{Tensor, TensorError, Var};

/// Uniform initialization range `[-gain/sqrt(fan_in), gain/sqrt(fan_in)]`.
#[derive(Clone, Copy, Debug)]
pub struct InitRange {
    pub fan_in: usize,
    pub gain: f64,
}

impl InitRange {
    /// The plain fan-in range, gain 1.
    pub fn fan_in(fan_in: usize) -> Self {
        Self { fan_in, gain: 1.0 }
    }

    pub fn bound(self) -> f64 {
        self.gain / (self.fan_in.max(1) as f64).sqrt()
    }
}

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let idx = self.names.len();
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        self.tensors.push(value);
        Ok(idx)
    }

    /// Inserts a `rows x cols` tensor drawn uniformly from the fan-in range.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: InitRange,
        rng: &mut R,
    ) -> Result<usize, TensorError> {
        let bound = init.bound();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::new(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar coordinates.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks that `other` has exactly the same names, order and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<(), TensorError> {
        for (name, t) in other.iter() {
            let mine = self
                .get(name)
                .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
            if mine.shape() != t.shape() {
                return Err(TensorError::ParamShape {
                    name: name.to_string(),
                    expected: mine.shape(),
                    actual: t.shape(),
                });
            }
        }
        if let Some(missing) = self.names.iter().find(|n| other.index_of(n).is_none()) {
            return Err(TensorError::UnknownParam(missing.clone()));
        }
        Ok(())
    }
}

/// Result of a backward pass: gradients for every tape node that required
/// one, plus one gradient per stored parameter (zero when unreachable).
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Tensor>,
}

impl Gradients {
    pub(crate) fn new(nodes: Vec<Option<Tensor>>, params: Vec<Tensor>) -> Self {
        Self { nodes, params }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.index()).and_then(Option::as_ref)
    }

    /// Per-parameter gradients aligned with the store's order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }
}
