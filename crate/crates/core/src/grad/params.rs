use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, shaped array of trainable values with a same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    name: String,
    value: Tensor,
    grad: Tensor,
    /// Subject to weight decay. Biases are not.
    pub decay: bool,
}

impl ParamArray {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        ParamArray {
            name: name.into(),
            value,
            grad,
            decay,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn values(&self) -> &[f64] {
        self.value.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn grad(&self) -> &[f64] {
        self.grad.data()
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad.data_mut()
    }

    /// Simultaneous mutable access to values and gradient.
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.value.data_mut(), self.grad.data_mut())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered collection of parameters; order is creation order and is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: ParamArray) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == param.name) {
            return Err(Error::invalid(format!("duplicate parameter name {:?}", param.name)));
        }
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &ParamArray {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamArray {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamArray> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamArray> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(ParamArray::len).sum()
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.shape() != src.shape() {
                return Err(Error::Shape {
                    op: "copy_values_from",
                    left: dst.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }
}
