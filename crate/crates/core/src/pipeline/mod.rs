//! Analysis/synthesis chain: multi-scale encoder, importance masker,
//! quantizer, mask application and decoder.

pub mod config;
pub mod networks;
pub mod symbols;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{Gradients, Mode, ParamStore, Tape, Tensor};
use crate::scalar::Scalar;

pub use config::{Arch, PipelineConfig, SurrogateMode};
pub use networks::{pyramid_downsample, Decoder, Encoder, EncoderTape, Masker};
pub use symbols::{
    apply_mask, expand_importance, importance_map, quantize, quantize_value, ImportanceMap, ImportanceMatrix,
    MaskedCodeTensor, QuantizedCode, SymbolGrid, NORM_EPS,
};

/// Parameters of the three generator-side networks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<S> {
    pub encoder: ParamStore<S>,
    pub masker: ParamStore<S>,
    pub decoder: ParamStore<S>,
}

impl<S: Scalar> GeneratorParams<S> {
    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.masker.set_mode(mode);
        self.decoder.set_mode(mode);
    }

    pub fn cast<T: Scalar>(&self) -> GeneratorParams<T> {
        GeneratorParams {
            encoder: self.encoder.cast(),
            masker: self.masker.cast(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.masker.is_finite() && self.decoder.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrads<S> {
    pub encoder: Gradients<S>,
    pub masker: Gradients<S>,
    pub decoder: Gradients<S>,
}

/// Everything the hard (inference) chain produces for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis<S> {
    pub code: Tensor<S>,
    pub importance: ImportanceMap,
    pub mask: ImportanceMatrix,
    pub quantized: QuantizedCode,
    pub masked: MaskedCodeTensor,
}

/// Differentiable forward pass over a batch.
#[derive(Debug, Clone)]
pub struct TrainPass<S> {
    /// `x̂`, `[B, H, W, 3]`.
    pub reconstruction: Tensor<S>,
    /// `ω`, `[B, H/8, W/8, K]`.
    pub code: Tensor<S>,
    /// Masker logits `y`, `[B, H/8, W/8, 1]`; `None` when the masker is disabled.
    pub logits: Option<Tensor<S>>,
    /// Importance `m`, `[B, H/8, W/8, 1]`.
    pub importance: Option<Tensor<S>>,
    /// `m̂`, `[B, H/8, W/8, K]` (a ramp in relaxed mode).
    pub mask: Tensor<S>,
    /// Quantizer output (clamped code in relaxed mode).
    pub quantized: Tensor<S>,
    /// `z = m̂ · q̂`.
    pub masked: Tensor<S>,
    shift: f64,
    surrogate: SurrogateMode,
    encoder_tape: EncoderTape<S>,
    masker_tape: Option<Tape<S>>,
    decoder_tape: Tape<S>,
}

impl<S: Scalar> TrainPass<S> {
    /// Integer code tensors, one per batch item; hard modes only.
    pub fn masked_codes(&self, depth: u8) -> Result<Vec<MaskedCodeTensor>> {
        if self.surrogate == SurrogateMode::Relaxed {
            return Err(Error::Config("relaxed passes carry no integer code".into()));
        }
        let (_, h, w, k) = self.masked.nhwc()?;
        Ok(self
            .masked
            .unstack()
            .into_iter()
            .map(|t| MaskedCodeTensor {
                depth,
                grid: SymbolGrid {
                    height: h,
                    width: w,
                    channels: k,
                    data: t.data().iter().map(|v| v.as_f64().round() as u8).collect(),
                },
            })
            .collect())
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// The network structure of the codec; parameters live in [`GeneratorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    cfg: PipelineConfig,
    encoder: Encoder,
    masker: Masker,
    decoder: Decoder,
}

/// Stable per-network seed stream.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Pipeline {
    /// Builds the networks and freshly initialized parameters.
    pub fn build<S: Scalar>(cfg: PipelineConfig, seed: u64) -> Result<(Self, GeneratorParams<S>)> {
        cfg.validate()?;
        let mut enc = ParamStore::new();
        let mut msk = ParamStore::new();
        let mut dec = ParamStore::new();
        let encoder = Encoder::build(&cfg, &mut enc, &mut seeded_rng(seed, 1))?;
        let masker = Masker::build(&cfg, &mut msk, &mut seeded_rng(seed, 2))?;
        let decoder = Decoder::build(&cfg, &mut dec, &mut seeded_rng(seed, 3))?;
        Ok((
            Self {
                cfg,
                encoder,
                masker,
                decoder,
            },
            GeneratorParams {
                encoder: enc,
                masker: msk,
                decoder: dec,
            },
        ))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut PipelineConfig {
        &mut self.cfg
    }

    /// `ω = E(x)` for one `H x W x 3` image.
    pub fn encode<S: Scalar>(&self, params: &GeneratorParams<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let batch = as_batch(x, "encode")?;
        let (omega, _) = self.encoder.forward(&params.encoder, &batch)?;
        first_item(omega)
    }

    /// Masker logits `y` for one `h x w x K` code tensor.
    pub fn masker_logits<S: Scalar>(&self, params: &GeneratorParams<S>, omega: &Tensor<S>) -> Result<Tensor<S>> {
        let batch = as_batch(omega, "masker")?;
        let (y, _) = self.masker.forward(&params.masker, &batch)?;
        first_item(y)
    }

    /// `x̂ = G(z)` for one masked code tensor.
    pub fn decode<S: Scalar>(&self, params: &GeneratorParams<S>, z: &MaskedCodeTensor) -> Result<Tensor<S>> {
        if z.grid.channels != self.cfg.channels {
            return Err(shape_err(
                "decode",
                format!("{} channels", self.cfg.channels),
                format!("{}", z.grid.channels),
            ));
        }
        let batch = as_batch(&z.grid.to_tensor::<S>(), "decode")?;
        let (x, _) = self.decoder.forward(&params.decoder, &batch)?;
        first_item(x)
    }

    /// Runs the hard chain for one image at importance shift `shift`.
    pub fn analyze<S: Scalar>(&self, params: &GeneratorParams<S>, x: &Tensor<S>, shift: f64) -> Result<Analysis<S>> {
        let code = self.encode(params, x)?;
        let (h, w) = (code.dims()[0], code.dims()[1]);
        let quantized = quantize(&code, self.cfg.depth)?;
        let (importance, mask) = if self.cfg.use_masker {
            let y = self.masker_logits(params, &code)?;
            let m = importance_map(&y, shift)?;
            let mask = expand_importance(&m, self.cfg.channels);
            (m, mask)
        } else {
            let m = ImportanceMap {
                height: h,
                width: w,
                values: vec![1.0; h * w],
                shift,
            };
            (m, ImportanceMatrix::ones(h, w, self.cfg.channels))
        };
        let masked = apply_mask(&quantized, &mask)?;
        Ok(Analysis {
            code,
            importance,
            mask,
            quantized,
            masked,
        })
    }

    /// Batched forward pass with surrogate gradients for training.
    pub fn forward_train<S: Scalar>(
        &self,
        params: &GeneratorParams<S>,
        x: &Tensor<S>,
        shift: f64,
    ) -> Result<TrainPass<S>> {
        let cfg = &self.cfg;
        let relaxed = cfg.surrogate == SurrogateMode::Relaxed;
        let (omega, encoder_tape) = self.encoder.forward(&params.encoder, x)?;
        let (b, h, w, k) = omega.nhwc()?;
        let top = S::of(symbols::max_symbol(cfg.depth));
        let quantized = if relaxed {
            omega.map(|v| v.max(S::zero()).min(top))
        } else {
            omega.map(|v| S::of(quantize_value(v.as_f64(), cfg.depth) as f64))
        };

        let (logits, importance, masker_tape, mask) = if cfg.use_masker {
            let (y, tape) = self.masker.forward(&params.masker, &omega)?;
            let m = normalize_logits(&y, shift, b)?;
            let kk = S::of(k as f64);
            let mut mask = Tensor::zeros(&[b, h, w, k]);
            for (pos, &mv) in m.data().iter().enumerate() {
                for ch in 0..k {
                    let idx = pos * k + ch;
                    mask.data_mut()[idx] = if relaxed {
                        (mv * kk - S::of(ch as f64)).max(S::zero()).min(S::one())
                    } else if mv.as_f64() >= ch as f64 / k as f64 {
                        S::one()
                    } else {
                        S::zero()
                    };
                }
            }
            (Some(y), Some(m), Some(tape), mask)
        } else {
            (None, None, None, Tensor::full(&[b, h, w, k], S::one()))
        };

        let masked = quantized.zip_map(&mask, |q, m| q * m)?;
        let (reconstruction, decoder_tape) = self.decoder.forward(&params.decoder, &masked)?;
        Ok(TrainPass {
            reconstruction,
            code: omega,
            logits,
            importance,
            mask,
            quantized,
            masked,
            shift,
            surrogate: cfg.surrogate,
            encoder_tape,
            masker_tape,
            decoder_tape,
        })
    }

    /// Backpropagates `d loss / d x̂` through the whole chain.
    pub fn backward<S: Scalar>(
        &self,
        params: &GeneratorParams<S>,
        pass: &TrainPass<S>,
        grad_reconstruction: &Tensor<S>,
    ) -> Result<GeneratorGrads<S>> {
        if pass.surrogate == SurrogateMode::Off {
            return Err(Error::MissingCache("pipeline (surrogates disabled)"));
        }
        let mut grads = GeneratorGrads {
            encoder: Gradients::zeros_like(&params.encoder),
            masker: Gradients::zeros_like(&params.masker),
            decoder: Gradients::zeros_like(&params.decoder),
        };
        let grad_z = self.decoder.backward(
            &params.decoder,
            &pass.decoder_tape,
            grad_reconstruction,
            &mut grads.decoder,
        )?;
        let (b, _, _, k) = pass.code.nhwc()?;
        let top = S::of(symbols::max_symbol(self.cfg.depth));

        // z = m̂ q̂ ; clipped straight-through for q̂
        let mut grad_omega = Tensor::zeros(pass.code.dims());
        for i in 0..grad_z.len() {
            let om = pass.code.data()[i];
            if om >= S::zero() && om <= top {
                grad_omega.data_mut()[i] = grad_z.data()[i] * pass.mask.data()[i];
            }
        }

        if let (Some(m), Some(y), Some(tape)) = (&pass.importance, &pass.logits, &pass.masker_tape) {
            let kk = S::of(k as f64);
            let mut grad_m = Tensor::zeros(m.dims());
            for (pos, &mv) in m.data().iter().enumerate() {
                let scaled = mv * kk;
                let mut acc = S::zero();
                for ch in 0..k {
                    let lo = S::of(ch as f64);
                    if scaled > lo && scaled < lo + S::one() {
                        let idx = pos * k + ch;
                        acc += grad_z.data()[idx] * pass.quantized.data()[idx] * kk;
                    }
                }
                grad_m.data_mut()[pos] = acc;
            }
            let grad_y = normalize_logits_backward(y, m, &grad_m, pass.shift, b)?;
            let g = self.masker.backward(&params.masker, tape, &grad_y, &mut grads.masker)?;
            grad_omega.add_assign(&g)?;
        }

        self.encoder
            .backward(&params.encoder, &pass.encoder_tape, &grad_omega, &mut grads.encoder)?;
        Ok(grads)
    }

    /// Folds batchnorm statistics of a train-mode pass into the running statistics.
    pub fn update_running_stats<S: Scalar>(&self, params: &mut GeneratorParams<S>, pass: &TrainPass<S>) {
        self.encoder
            .update_running_stats(&mut params.encoder, &pass.encoder_tape);
        if let Some(t) = &pass.masker_tape {
            self.masker.update_running_stats(&mut params.masker, t);
        }
        self.decoder
            .update_running_stats(&mut params.decoder, &pass.decoder_tape);
    }
}

fn as_batch<S: Scalar>(x: &Tensor<S>, context: &'static str) -> Result<Tensor<S>> {
    if x.rank() != 3 {
        return Err(shape_err(context, "h x w x c tensor", format!("{:?}", x.dims())));
    }
    Tensor::stack(std::slice::from_ref(x))
}

fn first_item<S: Scalar>(t: Tensor<S>) -> Result<Tensor<S>> {
    t.unstack().into_iter().next().ok_or(Error::Empty("batch"))
}

/// Per batch item: `m = logistic((y - mean - shift) / (std + eps))`.
fn normalize_logits<S: Scalar>(y: &Tensor<S>, shift: f64, batch: usize) -> Result<Tensor<S>> {
    let per = y.len() / batch;
    let mut out = Vec::with_capacity(y.len());
    for item in y.data().chunks(per) {
        let vals: Vec<f64> = item.iter().map(|v| v.as_f64()).collect();
        let (mean, std) = symbols::mean_std(&vals);
        let denom = std + NORM_EPS;
        out.extend(
            vals.iter()
                .map(|v| S::of(symbols::logistic((v - mean - shift) / denom))),
        );
    }
    Tensor::new(y.dims(), out)
}

fn normalize_logits_backward<S: Scalar>(
    y: &Tensor<S>,
    m: &Tensor<S>,
    grad_m: &Tensor<S>,
    shift: f64,
    batch: usize,
) -> Result<Tensor<S>> {
    let per = y.len() / batch;
    let count = per as f64;
    let mut out = Vec::with_capacity(y.len());
    for ((yi, mi), gi) in y
        .data()
        .chunks(per)
        .zip(m.data().chunks(per))
        .zip(grad_m.data().chunks(per))
    {
        let vals: Vec<f64> = yi.iter().map(|v| v.as_f64()).collect();
        let (mean, std) = symbols::mean_std(&vals);
        let denom = std + NORM_EPS;
        // dL/dŷ
        let g: Vec<f64> = gi
            .iter()
            .zip(mi)
            .map(|(g, m)| {
                let (g, m) = (g.as_f64(), m.as_f64());
                g * m * (1.0 - m)
            })
            .collect();
        let g_mean = g.iter().sum::<f64>() / count;
        let g_dot_u: f64 = g.iter().zip(&vals).map(|(g, v)| g * (v - mean - shift)).sum();
        for (j, &v) in vals.iter().enumerate() {
            let dstd = if std > 0.0 { (v - mean) / (count * std) } else { 0.0 };
            out.push(S::of((g[j] - g_mean) / denom - g_dot_u / (denom * denom) * dstd));
        }
    }
    Tensor::new(y.dims(), out)
}
