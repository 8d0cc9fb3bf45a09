//! Dense tensors and named parameter storage.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Dense 64-bit float tensor. Vectors have shape `[n]`, matrices `[r, c]`,
/// scalars `[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "value count must equal product of extents"
        );
        Tensor { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Single value of a `[1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() requires a scalar tensor");
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn rows(&self) -> usize {
        self.shape[0]
    }

    pub(crate) fn cols(&self) -> usize {
        self.shape[1]
    }
}

/// Named parameter tensors with stable iteration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Per-parameter gradients, aligned with a store's parameter order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.tensors[*idx]
    }

    pub fn by_index(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    /// First parameter holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    /// Round every value to the nearest f32; models trained in 32-bit
    /// storage mode round-trip checkpoints bit-exactly.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.values_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Gradients {
    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values().iter()) {
                *x += *y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.values().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t.values_mut() {
                *v *= factor;
            }
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors.iter().position(|t| !t.is_finite())
    }
}

pub(crate) fn shape_mismatch(op: &str, expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        op: op.to_string(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_keeps_insertion_order() {
        let mut s = ParamStore::new();
        s.add("b", Tensor::zeros(vec![2]));
        s.add("a", Tensor::zeros(vec![3]));
        let names: Vec<_> = s.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, vec!["b", "a"]);
        assert_eq!(s.total_len(), 5);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(vec![1]));
        s.add("w", Tensor::zeros(vec![1]));
    }

    #[test]
    fn quantize_rounds_to_f32() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![0.1, 1.0 / 3.0]));
        s.quantize_f32();
        assert_eq!(s.get("w").values()[0], 0.1f32 as f64);
        assert_eq!(s.get("w").values()[1], (1.0f32 / 3.0) as f64);
    }
}
