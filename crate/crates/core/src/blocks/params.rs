use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform on `(-bound, bound)`.
    Uniform(f64),
    /// `ln(n + 1)` along the last axis, giving `A[c, n] = -(n + 1)`.
    SsmLogDecay,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn materialize<T: Scalar>(&self, rng: &mut impl Rng) -> Tensor<T> {
        let n = self.numel();
        let data: Vec<T> = match self.init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Const(v) => vec![T::lit(v); n],
            Init::Uniform(b) => (0..n).map(|_| T::lit(rng.random_range(-b..=b))).collect(),
            Init::SsmLogDecay => {
                let last = *self.shape.last().expect("rank >= 1");
                (0..n).map(|i| T::lit(((i % last) + 1) as f64).ln()).collect()
            }
        };
        Tensor::new(&self.shape, data).expect("spec shape is valid")
    }
}

/// Named parameter (or gradient) tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn from_specs(specs: &[ParamSpec], rng: &mut impl Rng) -> Self {
        let mut store = Self::new();
        for s in specs {
            store.insert(s.name.clone(), s.materialize(rng));
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn scalar(&self, name: &str) -> Result<T> {
        Ok(self.get(name)?.data()[0])
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Adds `g` into the entry `name`, creating it when absent.
    pub fn accumulate(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(t) => t.add_assign(g),
            None => {
                self.tensors.insert(name.to_string(), g.clone());
                Ok(())
            }
        }
    }

    pub fn accumulate_scalar(&mut self, name: &str, g: T) -> Result<()> {
        self.accumulate(name, &Tensor::vector(vec![g]))
    }

    /// Merges every tensor of `other` into `self` by addition.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        for (k, v) in &other.tensors {
            self.accumulate(k, v)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn scale_all(&mut self, s: T) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// Copies every entry whose name starts with `prefix`.
    pub fn extract_prefix(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Joins name segments with dots, skipping empty prefixes.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
