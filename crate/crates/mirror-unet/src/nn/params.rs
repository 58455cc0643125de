//! Flat parameter storage with named entries and single-storage tying.
//!
//! Layers hold [`ParamId`] indices into a [`ParamStore`]. Weight tying is
//! expressed by two layers holding the *same* id, so tied stages are
//! identical by construction after every optimizer step, and gradient
//! contributions from every use of a parameter accumulate into one buffer.

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamMeta {
    pub name: String,
    /// Whether weight decay applies (convolution/linear weights only).
    pub decay: bool,
}

#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Tensor<S>>,
    grads: Vec<Tensor<S>>,
    meta: Vec<ParamMeta>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            grads: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, decay: bool, tensor: Tensor<S>) -> ParamId {
        let id = ParamId(self.params.len());
        self.grads.push(Tensor::zeros(tensor.shape()));
        self.params.push(tensor);
        self.meta.push(ParamMeta {
            name: name.into(),
            decay,
        });
        id
    }

    /// He-style normal initialization for a weight of the given fan-in.
    pub fn add_weight(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        self.add(name, true, Tensor::randn(shape, std, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, false, Tensor::zeros(shape))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: S) -> ParamId {
        self.add(name, false, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.grads[id.0]
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.meta[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(S::ZERO);
        }
    }

    /// Total number of scalar parameters (each storage counted once).
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Splits borrows so a layer can read its weight while accumulating a grad.
    pub fn param_and_grad_mut(&mut self, id: ParamId) -> (&Tensor<S>, &mut Tensor<S>) {
        (&self.params[id.0], &mut self.grads[id.0])
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self.params.iter().map(|p| p.cast()).collect(),
            grads: self.grads.iter().map(|g| g.cast()).collect(),
            meta: self.meta.clone(),
        }
    }
}
