//! Named parameter storage with gradient slots and Adam moments.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// One named tensor plus its gradient slot and Adam moment accumulators.
///
/// Non-trainable entries (batchnorm running statistics) keep the same layout;
/// their gradient and moments simply stay zero and the optimizer skips them.
#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub value: Tensor4<S>,
    pub grad: Tensor4<S>,
    pub m: Tensor4<S>,
    pub v: Tensor4<S>,
    pub trainable: bool,
}

/// Ordered map of named parameters. Insertion order is stable, which makes
/// optimizer sweeps and checkpoint layout deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: IndexMap<String, ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor4<S>, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let shape = value.shape();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: Tensor4::zeros(shape),
                m: Tensor4::zeros(shape),
                v: Tensor4::zeros(shape),
                trainable,
            },
        );
        Ok(())
    }

    /// Registers a trainable parameter (kernel, bias, batchnorm scale/shift).
    pub fn insert_trainable(&mut self, name: &str, value: Tensor4<S>) -> Result<()> {
        self.insert(name, value, true)
    }

    /// Registers a non-trainable buffer (running mean/variance).
    pub fn insert_buffer(&mut self, name: &str, value: Tensor4<S>) -> Result<()> {
        self.insert(name, value, false)
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Missing(format!("unknown parameter '{name}'")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<S>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Missing(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor4<S>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor4<S>> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor4<S>> {
        Ok(&self.entry(name)?.grad)
    }

    /// Accumulates `g` into the gradient slot of `name`.
    pub fn grad_add(&mut self, name: &str, g: &Tensor4<S>) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.grad.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match parameter '{}' shape {:?}",
                g.shape(),
                name,
                entry.grad.shape()
            )));
        }
        for (dst, src) in entry.grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *dst += *src;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.as_mut_slice().fill(S::zero());
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across trainable parameters.
    pub fn num_trainable_values(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Copies values (not moments) into another scalar type, preserving
    /// names, order, and trainability. Used by the 64-bit gradient-check mode.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, entry) in &self.entries {
            out.insert(name, entry.value.cast(), entry.trainable)
                .expect("names unique in source store");
        }
        out
    }

    /// Structural integrity check used after checkpoint load: running-variance
    /// buffers must be strictly positive and every value finite.
    pub fn validate(&self) -> Result<()> {
        for (name, entry) in &self.entries {
            entry
                .value
                .check_finite(&format!("parameter '{name}'"))
                .map_err(|_| Error::Checkpoint(format!("non-finite value in parameter '{name}'")))?;
            if name.ends_with(".running_var")
                && entry.value.as_slice().iter().any(|v| *v <= S::zero())
            {
                return Err(Error::Checkpoint(format!(
                    "running variance '{name}' has a non-positive entry"
                )));
            }
        }
        Ok(())
    }
}
