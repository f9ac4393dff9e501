use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::scalar::Scalar;

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Registers a tensor and returns its slot. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(move |i| &mut self.tensors[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.add(name, Tensor::zeros(t.shape()));
        }
        out
    }
}

/// Samples `N(0, std²)` for every element.
pub(crate) fn normal_tensor<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive standard deviation");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("sized to shape")
}
