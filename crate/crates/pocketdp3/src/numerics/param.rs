//! Named parameters with accumulating gradients.

use super::array::{Array, Scalar};
use super::rng::RngStream;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A trainable tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Array<T>,
    pub grad: Array<T>,
    pub name: String,
}

/// Flat, ordered collection of parameters. Order is creation order, which is
/// deterministic given a fixed model construction sequence; everything
/// downstream (optimizer, checkpoints, gradient reduction) iterates in this
/// order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Array<T>) -> ParamId {
        let grad = Array::zeros(value.shape());
        self.params.push(Parameter {
            value,
            grad,
            name: name.to_string(),
        });
        ParamId(self.params.len() - 1)
    }

    /// Gaussian init with the given standard deviation.
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut RngStream) -> ParamId {
        let mut value = Array::zeros(shape);
        for v in value.data_mut() {
            *v = T::from_f64(rng.normal() * std);
        }
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Array::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameter elements.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Fresh zero arrays shaped like each parameter, for per-worker gradient
    /// accumulation before a deterministic reduction.
    pub fn grad_buffers(&self) -> Vec<Array<T>> {
        self.params.iter().map(|p| Array::zeros(p.value.shape())).collect()
    }

    /// Accumulate a buffer produced by [`ParamStore::grad_buffers`] into the
    /// parameters' own gradients.
    pub fn accumulate_grads(&mut self, bufs: &[Array<T>]) {
        assert_eq!(bufs.len(), self.params.len());
        for (p, b) in self.params.iter_mut().zip(bufs) {
            p.grad.axpy(T::one(), b);
        }
    }

    /// Cast the whole store to another precision (values only, grads zeroed).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast());
        }
        out
    }
}
