//! Adam optimizer with L2 weight decay on decay-flagged parameters.

use super::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<S>) -> Self {
        let m = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape()))
            .collect();
        let v = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape()))
            .collect();
        Adam {
            cfg,
            m,
            v,
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One update over every parameter; weight decay is added to the raw
    /// gradient for decay-flagged parameters (convolution/linear weights),
    /// never for biases or normalization affines.
    pub fn step(&mut self, store: &mut ParamStore<S>) {
        self.step += 1;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.cfg.beta2);
        let eps = S::from_f64(self.cfg.eps);
        let wd = S::from_f64(self.cfg.weight_decay);
        // Bias-corrected step size.
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        let alpha = S::from_f64(self.cfg.lr * bc2.sqrt() / bc1);

        for id in store.ids().collect::<Vec<_>>() {
            let decay = store.meta(id).decay;
            let idx = id.0;
            let (param, grad) = {
                let p = store.get(id).clone();
                let g = store.grad(id).clone();
                (p, g)
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = store.get_mut(id);
            for i in 0..p.numel() {
                let mut g = grad.data()[i];
                if decay {
                    g += wd * param.data()[i];
                }
                let mi = b1 * m.data()[i] + one_m_b1 * g;
                let vi = b2 * v.data()[i] + one_m_b2 * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= alpha * mi / (vi.sqrt() + eps);
            }
        }
    }
}
