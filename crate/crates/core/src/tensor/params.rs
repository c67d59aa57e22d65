use super::{Real, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Xavier-uniform initialization over `[fan_in, fan_out]`.
    pub fn xavier<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(dist.sample(rng)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    /// Embedding table `[rows, dim]` drawn from `N(0, dim^-1/2)`.
    pub fn embedding<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let std = (dim as f64).powf(-0.5);
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..rows * dim).map(|_| T::of(dist.sample(rng))).collect();
        self.insert(name, Tensor::new(vec![rows, dim], data)?)
    }

    pub fn constant(&mut self, name: &str, len: usize, value: f64) -> Result<ParamId> {
        self.insert(name, Tensor::new(vec![len], vec![T::of(value); len])?)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_size(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Gradient accumulators aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T = f32> {
    bufs: Vec<Vec<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads {
            bufs: store
                .tensors
                .iter()
                .map(|t| vec![T::zero(); t.numel()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.bufs
            .iter()
            .flatten()
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
