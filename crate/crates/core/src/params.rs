use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named tensors with paired gradient buffers.
///
/// Every mutation of a value bumps `version`; forward caches record the
/// version they were computed at so a backward pass through a cache that
/// predates an optimizer step is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Entry>,
    seed: u64,
    version: u64,
}

impl ParameterSet {
    pub fn new(seed: u64) -> Self {
        ParameterSet {
            entries: BTreeMap::new(),
            seed,
            version: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Entry { value, grad });
        self.version += 1;
        Ok(())
    }

    /// Uniform fan-in scaled initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    /// The stream depends only on `(seed, name)`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut r = rng::rng_for(self.seed, name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::from_vec(shape, data)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.version += 1;
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.grad)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Value and gradient of one entry at once, for backward passes that read
    /// the weight while accumulating into its gradient.
    pub fn entry_mut(&mut self, name: &str) -> Result<&mut Entry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Set every value to `v` (zero-initialized reference models).
    pub fn fill_values(&mut self, v: f64) {
        self.version += 1;
        for e in self.entries.values_mut() {
            e.value.fill(v);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Entry)> {
        self.version += 1;
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bitwise equality of names, shapes and values (gradients ignored).
    pub fn same_values(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Copy values from `other` (same layout). Used to refresh a behaviour
    /// policy snapshot.
    pub fn copy_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, e) in self.entries.iter_mut() {
            let src = other.value(name)?;
            if src.shape() != e.value.shape() {
                return Err(Error::shape(format!("copy `{name}`"), e.value.shape(), src.shape()));
            }
            e.value.data_mut().copy_from_slice(src.data());
        }
        self.version += 1;
        Ok(())
    }
}
