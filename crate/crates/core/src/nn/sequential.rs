use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;

use super::layer::{Cache, Layer, LayerSpec};
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

/// A chain of layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
    in_channels: usize,
}

/// Activations of one [`Sequential`] forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S>(Vec<Cache<S>>);

impl Sequential {
    pub fn build<S: Scalar>(
        specs: &[LayerSpec],
        in_channels: usize,
        prefix: &str,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = in_channels;
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::build(*spec, channels, &format!("{prefix}.{i}"), store, rng)?;
            channels = layer.out_channels();
            layers.push(layer);
        }
        Ok(Self { layers, in_channels })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, Layer::out_channels)
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<(Tensor<S>, Tape<S>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(store, &h)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, Tape(caches)))
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        tape: &Tape<S>,
        grad_out: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<Tensor<S>> {
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.0).rev() {
            g = layer.backward(store, cache, &g, grads)?;
        }
        Ok(g)
    }

    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, tape: &Tape<S>) {
        for (layer, cache) in self.layers.iter().zip(&tape.0) {
            layer.update_running_stats(store, cache);
        }
    }
}
