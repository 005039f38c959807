use std::collections::BTreeMap;

use rand::Rng;

use super::{DiffError, Tensor};

/// Named parameter tensors of one network, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, DiffError> {
        self.tensors.get(name).ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, DiffError> {
        self.tensors.get_mut(name).ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Merges `other` into `self`; fails on a name collision.
    pub fn extend(&mut self, other: ParamSet) -> Result<(), DiffError> {
        for (k, v) in other.tensors {
            if self.tensors.contains_key(&k) {
                return Err(DiffError::DuplicateParam(k));
            }
            self.tensors.insert(k, v);
        }
        Ok(())
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Registers a dense layer `name.w: [fan_in, fan_out]`, `name.b: [fan_out]`.
    pub fn init_dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.insert(format!("{name}.w"), glorot(&[fan_in, fan_out], fan_in, fan_out, rng));
        self.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
    }

    /// Registers a convolution kernel `name.w: [out, in, k, k]` and bias.
    pub fn init_conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) {
        let (fi, fo) = (c_in * k * k, c_out * k * k);
        self.insert(format!("{name}.w"), glorot(&[c_out, c_in, k, k], fi, fo, rng));
        self.insert(format!("{name}.b"), Tensor::zeros(&[c_out]));
    }

    /// Registers a transposed-convolution kernel `name.w: [in, out, k, k]` and bias.
    pub fn init_conv_transpose(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) {
        let (fi, fo) = (c_in * k * k, c_out * k * k);
        self.insert(format!("{name}.w"), glorot(&[c_in, c_out, k, k], fi, fo, rng));
        self.insert(format!("{name}.b"), Tensor::zeros(&[c_out]));
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}
