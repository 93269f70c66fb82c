use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{EntryKind, Gradients, ParamStore};
use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    Adam,
}

/// Optimizer state for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<S> {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// First moments, one per store entry (buffers keep an unused zero tensor).
    pub first: Vec<Tensor<S>>,
    /// Second moments.
    pub second: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(algorithm: Algorithm, learning_rate: f64, store: &ParamStore<S>) -> Self {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.value.dims())).collect();
        Self {
            algorithm,
            learning_rate,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// Applies one update; rejects the whole step if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer/gradient/store size mismatch: {} / {} / {}",
                self.first.len(),
                grads.len(),
                store.len()
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (entry, g) in store.entries().iter().zip(grads.tensors()) {
            if entry.kind == EntryKind::Trainable && !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", entry.name)));
            }
        }
        self.step += 1;
        let lr = S::of(self.learning_rate);
        let ids: Vec<_> = store.trainable_ids().collect();
        match self.algorithm {
            Algorithm::Sgd => {
                for id in ids {
                    let g = grads.get(id).data();
                    for (p, &gv) in store.get_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= lr * gv;
                    }
                }
            }
            Algorithm::Adam => {
                let (b1, b2) = (S::of(ADAM_BETA1), S::of(ADAM_BETA2));
                let t = self.step as i32;
                let c1 = S::one() - S::of(ADAM_BETA1.powi(t));
                let c2 = S::one() - S::of(ADAM_BETA2.powi(t));
                let eps = S::of(ADAM_EPS);
                for id in ids {
                    let i = id.index();
                    let g = grads.get(id).data();
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    let p = store.get_mut(id).data_mut();
                    for j in 0..g.len() {
                        m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                        v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        p[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
