use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 9e-4, weight_decay: 1e-3, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

/// First/second moments per parameter and the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { cfg, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One decoupled-decay Adam update. Parameters without a gradient are
    /// left untouched. Every gradient is checked before anything changes,
    /// so a non-finite gradient leaves parameters and moments intact.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
            }
        }
        self.step += 1;
        let AdamWConfig { lr, weight_decay, betas: (b1, b2), eps } = self.cfg;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let (lr_t, b1_t, b2_t, eps_t) = (T::of(lr), T::of(b1), T::of(b2), T::of(eps));
        let (c1_t, c2_t) = (T::of(c1), T::of(c2));
        let shrink = T::of(1.0 - lr * weight_decay);
        for (id, g) in grads.params() {
            let i = id.index();
            let decay = store.get(id).decay;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                if decay {
                    p[k] *= shrink;
                }
                m[k] = b1_t * m[k] + (T::one() - b1_t) * gk;
                v[k] = b2_t * v[k] + (T::one() - b2_t) * gk * gk;
                let m_hat = m[k] / c1_t;
                let v_hat = v[k] / c2_t;
                p[k] -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
