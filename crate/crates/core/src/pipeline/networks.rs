//! Encoder, masker and decoder networks.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{ops, ConvSpec, Gradients, LayerSpec, ParamStore, Sequential, Tape, Tensor};
use crate::scalar::Scalar;

use super::config::PipelineConfig;
use super::symbols::max_symbol;

fn conv(filters: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec::same(filters, kernel, stride))
}

fn residual(filters: usize) -> LayerSpec {
    LayerSpec::Residual { filters }
}

/// Average-pools by `2^(scale_index - 1)`; accepts `h x w x c` images or
/// NHWC batches.
pub fn pyramid_downsample<S: Scalar>(x: &Tensor<S>, scale_index: usize) -> Result<Tensor<S>> {
    if !(1..=3).contains(&scale_index) {
        return Err(Error::Config(format!(
            "scale index must be 1, 2 or 3, got {scale_index}"
        )));
    }
    let batched = x.rank() == 4;
    let (n, h, w, c) = match *x.dims() {
        [h, w, c] => (1, h, w, c),
        [n, h, w, c] => (n, h, w, c),
        ref d => return Err(shape_err("pyramid downsample", "h x w x c image", format!("{d:?}"))),
    };
    let factor = 1usize << (scale_index - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(shape_err(
            "pyramid downsample",
            format!("dims divisible by {factor}"),
            format!("{h}x{w}"),
        ));
    }
    let mut data = x.data().to_vec();
    let (mut ch, mut cw) = (h, w);
    for _ in 1..scale_index {
        data = ops::avg_pool2(&data, n, ch, cw, c);
        ch /= 2;
        cw /= 2;
    }
    if batched {
        Tensor::new(&[n, ch, cw, c], data)
    } else {
        Tensor::new(&[ch, cw, c], data)
    }
}

/// Three-scale encoder: per-scale stride-2 stacks summed with fixed weights,
/// then two convolutions emitting `K` channels at 1/8 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    branches: Vec<Sequential>,
    head: Sequential,
    alphas: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct EncoderTape<S> {
    branches: Vec<Tape<S>>,
    head: Tape<S>,
}

impl Encoder {
    pub fn build<S: Scalar>(cfg: &PipelineConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self> {
        let w = cfg.arch.width;
        let stage = |f: usize| [conv(f, 5, 2), LayerSpec::Relu, residual(f)];
        let specs: [Vec<LayerSpec>; 3] = [
            [stage(w / 4), stage(w / 2), stage(w)].concat(),
            [stage(w / 2), stage(w)].concat(),
            stage(w).to_vec(),
        ];
        let mut branches = Vec::with_capacity(3);
        for (i, s) in specs.iter().enumerate() {
            branches.push(Sequential::build(s, 3, &format!("enc.scale{}", i + 1), store, rng)?);
        }
        let head = Sequential::build(&[conv(w, 3, 1), conv(cfg.channels, 3, 1)], w, "enc.head", store, rng)?;
        // Centre the initial code in the quantizer range; with zero bias
        // every symbol rounds to 0 and the decoder sees a constant input.
        let mid = S::of(max_symbol(cfg.depth) / 2.0);
        let bias = store.id("enc.head.1.bias").expect("head bias");
        store.get_mut(bias).data_mut().iter_mut().for_each(|b| *b = mid);
        Ok(Self {
            branches,
            head,
            alphas: cfg.alphas,
        })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<(Tensor<S>, EncoderTape<S>)> {
        let (_, h, w, c) = x.nhwc()?;
        if h % 8 != 0 || w % 8 != 0 || c != 3 {
            return Err(shape_err(
                "encode",
                "H and W divisible by 8, 3 channels",
                format!("{h}x{w}x{c}"),
            ));
        }
        let mut sum: Option<Tensor<S>> = None;
        let mut tapes = Vec::with_capacity(3);
        for (i, branch) in self.branches.iter().enumerate() {
            let input = pyramid_downsample(x, i + 1)?;
            let (mut out, tape) = branch.forward(store, &input)?;
            out.scale(S::of(self.alphas[i]));
            tapes.push(tape);
            match sum.as_mut() {
                None => sum = Some(out),
                Some(acc) => acc.add_assign(&out)?,
            }
        }
        let (omega, head) = self.head.forward(store, &sum.expect("three branches"))?;
        Ok((omega, EncoderTape { branches: tapes, head }))
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        tape: &EncoderTape<S>,
        grad_omega: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<()> {
        let g_sum = self.head.backward(store, &tape.head, grad_omega, grads)?;
        for (i, branch) in self.branches.iter().enumerate() {
            let mut g = g_sum.clone();
            g.scale(S::of(self.alphas[i]));
            branch.backward(store, &tape.branches[i], &g, grads)?;
        }
        Ok(())
    }

    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, tape: &EncoderTape<S>) {
        for (branch, t) in self.branches.iter().zip(&tape.branches) {
            branch.update_running_stats(store, t);
        }
        self.head.update_running_stats(store, &tape.head);
    }
}

/// Residual stack producing the one-channel importance logits `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Masker {
    net: Sequential,
}

impl Masker {
    pub fn build<S: Scalar>(cfg: &PipelineConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self> {
        let w = cfg.arch.width;
        // lift K channels to the block width so the identity skips line up
        let mut specs = vec![conv(w, 3, 1), LayerSpec::Relu];
        specs.extend(std::iter::repeat_n(residual(w), cfg.arch.masker_blocks));
        // Pin the per-image logit scale. Left free, it drifts during
        // training until the shift n either stops moving the mask or flips
        // it all at once.
        specs.extend([conv(1, 3, 1), LayerSpec::InstanceNorm]);
        Ok(Self {
            net: Sequential::build(&specs, cfg.channels, "masker", store, rng)?,
        })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, omega: &Tensor<S>) -> Result<(Tensor<S>, Tape<S>)> {
        self.net.forward(store, omega)
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        tape: &Tape<S>,
        grad_y: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<Tensor<S>> {
        self.net.backward(store, tape, grad_y, grads)
    }

    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, tape: &Tape<S>) {
        self.net.update_running_stats(store, tape);
    }
}

/// Generator: two convolutions, a residual stack and three stride-2
/// transposed convolutions back to full resolution, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    net: Sequential,
}

impl Decoder {
    pub fn build<S: Scalar>(cfg: &PipelineConfig, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<Self> {
        let w = cfg.arch.width;
        let up = |f| LayerSpec::TransposedConv(ConvSpec::same(f, 3, 2));
        let mut specs = vec![conv(w / 2, 3, 1), LayerSpec::Relu, conv(w, 3, 1), LayerSpec::Relu];
        specs.extend(std::iter::repeat_n(residual(w), cfg.arch.decoder_blocks));
        specs.extend([
            up(w / 2),
            LayerSpec::Relu,
            up(w / 4),
            LayerSpec::Relu,
            up(3),
            LayerSpec::Sigmoid,
        ]);
        Ok(Self {
            net: Sequential::build(&specs, cfg.channels, "dec", store, rng)?,
        })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, z: &Tensor<S>) -> Result<(Tensor<S>, Tape<S>)> {
        self.net.forward(store, z)
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        tape: &Tape<S>,
        grad_x: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<Tensor<S>> {
        self.net.backward(store, tape, grad_x, grads)
    }

    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, tape: &Tape<S>) {
        self.net.update_running_stats(store, tape);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_examples() {
        let c = Tensor::<f32>::full(&[8, 8, 3], 0.3);
        for s in 1..=3 {
            assert!(pyramid_downsample(&c, s).unwrap().data().iter().all(|&v| v == 0.3));
        }
        let block = Tensor::<f64>::new(&[2, 2, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(pyramid_downsample(&block, 2).unwrap().data(), &[0.5]);
        let big = Tensor::<f32>::zeros(&[64, 64, 3]);
        assert_eq!(pyramid_downsample(&big, 3).unwrap().dims(), &[16, 16, 3]);
        assert_eq!(pyramid_downsample(&big, 1).unwrap(), big);
    }

    #[test]
    fn downsample_rejects_indivisible_dims() {
        let odd = Tensor::<f32>::zeros(&[6, 6, 3]);
        assert!(pyramid_downsample(&odd, 3).is_err());
        assert!(pyramid_downsample(&odd, 4).is_err());
    }
}
