//! Fully connected layer for the bottleneck classifier head.

use super::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add_weight(
            format!("{prefix}.weight"),
            &[out_features, in_features],
            in_features,
            rng,
        );
        let bias = store.add_zeros(format!("{prefix}.bias"), &[out_features]);
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.numel(), self.in_features);
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        let mut y = Tensor::zeros(&[self.out_features]);
        for o in 0..self.out_features {
            let mut acc = b.data()[o];
            let row = &w.data()[o * self.in_features..(o + 1) * self.in_features];
            for (&wv, &xv) in row.iter().zip(x.data()) {
                acc += wv * xv;
            }
            y.data_mut()[o] = acc;
        }
        y
    }

    /// Accumulates weight/bias grads and returns dx.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        x: &Tensor<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let mut dx = Tensor::zeros(&[self.in_features]);
        {
            let w = store.get(self.weight).clone();
            for o in 0..self.out_features {
                let g = dy.data()[o];
                let row = &w.data()[o * self.in_features..(o + 1) * self.in_features];
                for (dst, &wv) in dx.data_mut().iter_mut().zip(row) {
                    *dst += g * wv;
                }
            }
        }
        {
            let dw = store.grad_mut(self.weight);
            for o in 0..self.out_features {
                let g = dy.data()[o];
                let row = &mut dw.data_mut()[o * self.in_features..(o + 1) * self.in_features];
                for (dst, &xv) in row.iter_mut().zip(x.data()) {
                    *dst += g * xv;
                }
            }
        }
        {
            let db = store.grad_mut(self.bias);
            for (dst, &g) in db.data_mut().iter_mut().zip(dy.data()) {
                *dst += g;
            }
        }
        dx
    }
}
