use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named learnable parameters with paired gradient buffers, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    index: IndexMap<String, usize>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("parameter `{name}` already exists")));
        }
        let id = self.values.len();
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn grad(&self, id: usize) -> &Tensor {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.grads[id]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.values[self.id(name)?])
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Zero-filled buffers shaped like the parameters, for per-chunk gradients.
    pub fn zero_buffers(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| vec![0.0; v.len()]).collect()
    }

    /// Adds `bufs` (one per parameter, in order) into the gradient buffers.
    pub fn accumulate(&mut self, bufs: &[Vec<f64>]) {
        assert_eq!(bufs.len(), self.grads.len());
        for (g, b) in self.grads.iter_mut().zip(bufs) {
            for (x, y) in g.data_mut().iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Maps a flat coordinate to `(parameter id, offset)`.
    pub fn locate(&self, mut coord: usize) -> (usize, usize) {
        for (id, v) in self.values.iter().enumerate() {
            if coord < v.len() {
                return (id, coord);
            }
            coord -= v.len();
        }
        panic!("coordinate out of range");
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}
