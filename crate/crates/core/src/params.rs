//! Named parameter collections.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Ordered map from parameter names to tensors. Iteration order is insertion
/// order, which fixes checkpoint layout and optimizer update order.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name: {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    /// Replace the payload of an existing entry; shapes must match.
    pub fn assign(&mut self, name: &str, tensor: &Tensor<T>) -> Result<()> {
        let current = self
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        if current.shape() != tensor.shape() {
            return Err(Error::shape(current.shape(), tensor.shape()));
        }
        *current = tensor.clone();
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// RNG stream for initializing the parameter with the given name. Deriving
/// the stream from the name (not from insertion order) makes identically
/// named tensors initialize identically across different model layouts.
pub fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Uniform fan-in-scaled initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
pub fn he_uniform<T: Scalar>(seed: u64, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let mut rng = init_rng(seed, name);
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(store.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn iteration_keeps_insertion_order() {
        let mut store = ParameterStore::<f32>::new();
        for name in ["z", "a", "m"] {
            store.insert(name, Tensor::zeros(vec![1])).unwrap();
        }
        let names: Vec<_> = store.names().collect();
        assert_eq!(names, vec!["z", "a", "m"]);
    }

    #[test]
    fn init_depends_on_name_not_order() {
        let a1: Tensor<f32> = he_uniform(7, "enc.fc1.w", vec![4, 4], 4);
        let a2: Tensor<f32> = he_uniform(7, "enc.fc1.w", vec![4, 4], 4);
        let b: Tensor<f32> = he_uniform(7, "enc.fc2.w", vec![4, 4], 4);
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn assign_checks_shape() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(store.assign("w", &Tensor::zeros(vec![3])).is_err());
        assert!(store.assign("w", &Tensor::zeros(vec![2, 2])).is_ok());
    }
}
