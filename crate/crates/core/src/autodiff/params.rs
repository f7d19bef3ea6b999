use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// AdamW first and second moments.
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub trainable: bool,
}

/// Flat registry of named arrays with gradient slots and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    pub step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name:?}")));
        }
        let dim = value.dim();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            trainable: true,
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Uniform `±1/√fan_in` initialisation, the usual default for dense and
    /// recurrent layers.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: (usize, usize),
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let v = Array2::from_shape_simple_fn(shape, || dist.sample(rng));
        self.add(name, v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].grad
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Array2<f64>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.grad.dim() != g.dim() {
            return Err(Error::Shape(format!(
                "gradient for {} has shape {:?}, parameter is {:?}",
                e.name,
                g.dim(),
                e.grad.dim()
            )));
        }
        e.grad += g;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// All values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.grad.iter().copied()).collect()
    }

    /// Bit-level fingerprint of the parameter values.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the raw bits.
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.flat_values() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn same_schema(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.name == b.name && a.value.dim() == b.value.dim())
    }

    /// Copy values from `other` (same schema), leaving gradients and moments.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if !self.same_schema(other) {
            return Err(Error::Shape("parameter schemas differ".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.assign(&b.value);
        }
        Ok(())
    }
}
