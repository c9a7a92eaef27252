//! Named trainable arrays and their gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::array::DenseArray;
use crate::error::{KernelError, Result};
use crate::rng::SeededRng;

/// How a parameter is filled when first requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`. Fan sizes are
    /// taken from the first and last axes.
    Glorot,
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: DenseArray,
    pub grad: DenseArray,
}

/// Parameter values keyed by unique name, in sorted order.
///
/// Lazily initialized entries draw from a generator seeded by the store seed
/// and a hash of the name, so initial values do not depend on the order in
/// which layers are first touched.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    seed: u64,
    entries: BTreeMap<String, Param>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            seed,
            entries: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    /// Inserts or replaces a parameter value; the gradient is reset to zero.
    pub fn insert(&mut self, name: &str, value: DenseArray) {
        let grad = DenseArray::zeros(value.shape());
        self.entries.insert(name.to_string(), Param { value, grad });
    }

    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<&DenseArray> {
        if let Some(p) = self.entries.get(name) {
            if p.value.shape() != shape {
                return Err(KernelError::dim(
                    name,
                    format!("stored shape {:?}, requested {:?}", p.value.shape(), shape),
                ));
            }
        } else {
            let value = self.initial_value(name, shape, init);
            self.insert(name, value);
        }
        Ok(&self.entries[name].value)
    }

    fn initial_value(&self, name: &str, shape: &[usize], init: Init) -> DenseArray {
        match init {
            Init::Zeros => DenseArray::zeros(shape),
            Init::Constant(c) => DenseArray::full(shape, c),
            Init::Glorot => {
                let fan_in = shape.first().copied().unwrap_or(1);
                let fan_out = shape.last().copied().unwrap_or(1);
                let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let mut rng = SeededRng::new(self.seed ^ fnv1a(name));
                DenseArray::from_fn(shape, |_| rng.inner().random_range(-a..=a))
            }
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &DenseArray) {
        if let Some(p) = self.entries.get_mut(name) {
            p.grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, c: f64) {
        for p in self.entries.values_mut() {
            for g in p.grad.data_mut() {
                *g *= c;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }
}
