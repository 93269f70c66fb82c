use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::ops::{self, ConvGeom};
use super::params::{EntryKind, Gradients, Mode, ParamId, ParamStore};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Square-kernel convolution hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Zero padding of `(kernel - 1) / 2`: stride 1 keeps the spatial size,
    /// stride 2 halves even sizes.
    pub fn same(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
            padding: (kernel - 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// Maps an `h x w` map to `stride*h x stride*w`.
    TransposedConv(ConvSpec),
    BatchNorm,
    /// Per item and channel: subtract the spatial mean, divide by the
    /// spatial standard deviation. No parameters, same in both modes.
    InstanceNorm,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    /// 2x2 average pooling, stride 2.
    AvgPool,
    /// conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus identity skip, then ReLU.
    Residual {
        filters: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv(c) | LayerSpec::TransposedConv(c) => {
                if c.kernel == 0 || c.filters == 0 {
                    return Err(Error::InvalidSpec(format!("kernel and filters must be >= 1: {c:?}")));
                }
                if !(1..=2).contains(&c.stride) {
                    return Err(Error::InvalidSpec(format!("stride must be 1 or 2, got {}", c.stride)));
                }
                Ok(())
            }
            LayerSpec::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(Error::InvalidSpec(format!(
                "leaky slope must lie in (0, 1), got {slope}"
            ))),
            LayerSpec::Residual { filters: 0 } => Err(Error::InvalidSpec("residual block needs filters".into())),
            _ => Ok(()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::TransposedConv(_) => "transposed-conv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::InstanceNorm => "instance-norm",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky-relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::AvgPool => "avgpool",
            LayerSpec::Residual { .. } => "residual-block",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    None,
    Affine {
        weight: ParamId,
        bias: ParamId,
    },
    Norm {
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    },
    Residual(Vec<Layer>),
}

/// A layer bound to its tensors inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    in_channels: usize,
    params: Params,
}

/// Forward activations retained for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<S> {
    Conv {
        geom: ConvGeom,
        cols: Vec<S>,
    },
    TransposedConv {
        /// Geometry of the adjoint convolution, output grid -> input grid.
        geom: ConvGeom,
        input: Tensor<S>,
    },
    BatchNorm {
        xhat: Vec<S>,
        inv_std: Vec<S>,
        batch_mean: Vec<S>,
        batch_var: Vec<S>,
        train: bool,
        dims: Vec<usize>,
    },
    InstanceNorm {
        xhat: Vec<S>,
        /// Per item, then channel.
        inv_std: Vec<S>,
        dims: Vec<usize>,
    },
    Rectifier {
        input: Tensor<S>,
    },
    Sigmoid {
        output: Tensor<S>,
    },
    AvgPool {
        dims: Vec<usize>,
    },
    Residual {
        children: Vec<Cache<S>>,
        pre_activation: Tensor<S>,
    },
}

fn uniform_tensor<S: Scalar>(dims: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<S> {
    Tensor::from_fn(dims, |_| S::of(rng.gen_range(-bound..bound)))
}

impl Layer {
    /// Allocates (and initializes) the layer's tensors under `prefix`.
    pub fn build<S: Scalar>(
        spec: LayerSpec,
        in_channels: usize,
        prefix: &str,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        if in_channels == 0 {
            return Err(Error::InvalidSpec(format!("{prefix}: zero input channels")));
        }
        let params = match spec {
            LayerSpec::Conv(c) => {
                let fan_in = c.kernel * c.kernel * in_channels;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = store.insert(
                    format!("{prefix}.weight"),
                    EntryKind::Trainable,
                    uniform_tensor(&[c.kernel, c.kernel, in_channels, c.filters], bound, rng),
                )?;
                let bias = store.insert(
                    format!("{prefix}.bias"),
                    EntryKind::Trainable,
                    Tensor::zeros(&[c.filters]),
                )?;
                Params::Affine { weight, bias }
            }
            LayerSpec::TransposedConv(c) => {
                let fan_in = (c.kernel * c.kernel * in_channels).div_ceil(c.stride * c.stride);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = store.insert(
                    format!("{prefix}.weight"),
                    EntryKind::Trainable,
                    uniform_tensor(&[c.kernel, c.kernel, c.filters, in_channels], bound, rng),
                )?;
                let bias = store.insert(
                    format!("{prefix}.bias"),
                    EntryKind::Trainable,
                    Tensor::zeros(&[c.filters]),
                )?;
                Params::Affine { weight, bias }
            }
            LayerSpec::BatchNorm => Params::Norm {
                gamma: store.insert(
                    format!("{prefix}.gamma"),
                    EntryKind::Trainable,
                    Tensor::full(&[in_channels], S::one()),
                )?,
                beta: store.insert(
                    format!("{prefix}.beta"),
                    EntryKind::Trainable,
                    Tensor::zeros(&[in_channels]),
                )?,
                running_mean: store.insert(
                    format!("{prefix}.running_mean"),
                    EntryKind::Buffer,
                    Tensor::zeros(&[in_channels]),
                )?,
                running_var: store.insert(
                    format!("{prefix}.running_var"),
                    EntryKind::Buffer,
                    Tensor::full(&[in_channels], S::one()),
                )?,
            },
            LayerSpec::Residual { filters } => {
                if filters != in_channels {
                    return Err(Error::InvalidSpec(format!(
                        "{prefix}: residual block with {filters} filters on {in_channels} input channels"
                    )));
                }
                let conv = LayerSpec::Conv(ConvSpec::same(filters, 3, 1));
                Params::Residual(vec![
                    Layer::build(conv, filters, &format!("{prefix}.conv1"), store, rng)?,
                    Layer::build(LayerSpec::BatchNorm, filters, &format!("{prefix}.bn1"), store, rng)?,
                    Layer::build(LayerSpec::Relu, filters, &format!("{prefix}.relu"), store, rng)?,
                    Layer::build(conv, filters, &format!("{prefix}.conv2"), store, rng)?,
                    Layer::build(LayerSpec::BatchNorm, filters, &format!("{prefix}.bn2"), store, rng)?,
                ])
            }
            _ => Params::None,
        };
        Ok(Self {
            spec,
            in_channels,
            params,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        match self.spec {
            LayerSpec::Conv(c) | LayerSpec::TransposedConv(c) => c.filters,
            LayerSpec::Residual { filters } => filters,
            _ => self.in_channels,
        }
    }

    /// Parameters owned by this layer (recursively), in creation order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.params {
            Params::None => vec![],
            Params::Affine { weight, bias } => vec![*weight, *bias],
            Params::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![*gamma, *beta, *running_mean, *running_var],
            Params::Residual(children) => children.iter().flat_map(Layer::param_ids).collect(),
        }
    }

    fn check_input<S: Scalar>(&self, x: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
        let (n, h, w, c) = x.nhwc()?;
        if c != self.in_channels {
            return Err(shape_err(
                self.spec.name(),
                format!("{} input channels", self.in_channels),
                format!("{c} channels (dims {:?})", x.dims()),
            ));
        }
        x.ensure_finite(self.spec.name())?;
        Ok((n, h, w, c))
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<(Tensor<S>, Cache<S>)> {
        let (n, h, w, c) = self.check_input(x)?;
        match (&self.spec, &self.params) {
            (LayerSpec::Conv(cs), Params::Affine { weight, bias }) => {
                let geom = ConvGeom::new(n, h, w, c, cs.kernel, cs.stride, cs.padding).ok_or_else(|| {
                    shape_err(
                        "conv",
                        format!("spatial dims >= kernel {} after padding", cs.kernel),
                        format!("{h}x{w}"),
                    )
                })?;
                let cols = ops::im2col(x.data(), &geom);
                let rows = geom.rows();
                let mut out = vec![S::zero(); rows * cs.filters];
                ops::matmul(
                    &cols,
                    false,
                    store.get(*weight).data(),
                    false,
                    rows,
                    geom.patch(),
                    cs.filters,
                    &mut out,
                    false,
                );
                add_bias(&mut out, store.get(*bias).data());
                let y = Tensor::new(&[n, geom.oh, geom.ow, cs.filters], out)?;
                Ok((y, Cache::Conv { geom, cols }))
            }
            (LayerSpec::TransposedConv(cs), Params::Affine { weight, bias }) => {
                let (oh, ow) = (h * cs.stride, w * cs.stride);
                let geom = ConvGeom::new(n, oh, ow, cs.filters, cs.kernel, cs.stride, cs.padding)
                    .filter(|g| g.oh == h && g.ow == w)
                    .ok_or_else(|| {
                        shape_err(
                            "transposed-conv",
                            format!(
                                "kernel {} / padding {} inverting stride {}",
                                cs.kernel, cs.padding, cs.stride
                            ),
                            format!("{h}x{w} input"),
                        )
                    })?;
                let rows = n * h * w;
                let mut cols = vec![S::zero(); rows * geom.patch()];
                ops::matmul(
                    x.data(),
                    false,
                    store.get(*weight).data(),
                    true,
                    rows,
                    c,
                    geom.patch(),
                    &mut cols,
                    false,
                );
                let mut out = ops::col2im(&cols, &geom);
                add_bias(&mut out, store.get(*bias).data());
                let y = Tensor::new(&[n, oh, ow, cs.filters], out)?;
                Ok((y, Cache::TransposedConv { geom, input: x.clone() }))
            }
            (
                LayerSpec::BatchNorm,
                Params::Norm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                },
            ) => {
                let train = store.mode() == Mode::Train;
                let (batch_mean, batch_var) = ops::channel_moments(x.data(), c);
                let (mean, var) = if train {
                    (batch_mean.clone(), batch_var.clone())
                } else {
                    (
                        store.get(*running_mean).data().to_vec(),
                        store.get(*running_var).data().to_vec(),
                    )
                };
                let eps = S::of(BN_EPS);
                let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
                let (g, b) = (store.get(*gamma).data(), store.get(*beta).data());
                let mut xhat = x.data().to_vec();
                let mut out = vec![S::zero(); xhat.len()];
                for (xr, or) in xhat.chunks_mut(c).zip(out.chunks_mut(c)) {
                    for ch in 0..c {
                        xr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                        or[ch] = g[ch] * xr[ch] + b[ch];
                    }
                }
                let y = Tensor::new(x.dims(), out)?;
                Ok((
                    y,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        batch_mean,
                        batch_var,
                        train,
                        dims: x.dims().to_vec(),
                    },
                ))
            }
            (LayerSpec::InstanceNorm, _) => {
                let eps = S::of(BN_EPS);
                let mut xhat = x.data().to_vec();
                let mut inv_std = Vec::with_capacity(n * c);
                for item in xhat.chunks_mut(h * w * c) {
                    let (mean, var) = ops::channel_moments(item, c);
                    let inv: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
                    for row in item.chunks_mut(c) {
                        for ch in 0..c {
                            row[ch] = (row[ch] - mean[ch]) * inv[ch];
                        }
                    }
                    inv_std.extend(inv);
                }
                let y = Tensor::new(x.dims(), xhat.clone())?;
                Ok((
                    y,
                    Cache::InstanceNorm {
                        xhat,
                        inv_std,
                        dims: x.dims().to_vec(),
                    },
                ))
            }
            (LayerSpec::Relu, _) => Ok((x.map(|v| v.max(S::zero())), Cache::Rectifier { input: x.clone() })),
            (LayerSpec::LeakyRelu { slope }, _) => {
                let a = S::of(*slope);
                Ok((
                    x.map(|v| if v > S::zero() { v } else { a * v }),
                    Cache::Rectifier { input: x.clone() },
                ))
            }
            (LayerSpec::Sigmoid, _) => {
                let y = x.map(ops::sigmoid);
                Ok((y.clone(), Cache::Sigmoid { output: y }))
            }
            (LayerSpec::AvgPool, _) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(shape_err("avgpool", "even spatial dims", format!("{h}x{w}")));
                }
                let y = Tensor::new(&[n, h / 2, w / 2, c], ops::avg_pool2(x.data(), n, h, w, c))?;
                Ok((
                    y,
                    Cache::AvgPool {
                        dims: x.dims().to_vec(),
                    },
                ))
            }
            (LayerSpec::Residual { .. }, Params::Residual(children)) => {
                let mut caches = Vec::with_capacity(children.len());
                let mut h = x.clone();
                for child in children {
                    let (next, cache) = child.forward(store, &h)?;
                    caches.push(cache);
                    h = next;
                }
                h.add_assign(x)?;
                let y = h.map(|v| v.max(S::zero()));
                Ok((
                    y,
                    Cache::Residual {
                        children: caches,
                        pre_activation: h,
                    },
                ))
            }
            _ => unreachable!("layer params do not match spec"),
        }
    }

    /// Returns the input gradient and accumulates parameter gradients into `grads`.
    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        cache: &Cache<S>,
        grad_out: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<Tensor<S>> {
        grad_out.ensure_finite("backward gradient")?;
        match (&self.spec, &self.params, cache) {
            (LayerSpec::Conv(cs), Params::Affine { weight, bias }, Cache::Conv { geom, cols }) => {
                expect_dims(grad_out, &[geom.n, geom.oh, geom.ow, cs.filters], "conv backward")?;
                let rows = geom.rows();
                let patch = geom.patch();
                let g = grad_out.data();
                ops::matmul(
                    cols,
                    true,
                    g,
                    false,
                    patch,
                    rows,
                    cs.filters,
                    grads.get_mut(*weight).data_mut(),
                    true,
                );
                accumulate_bias(grads.get_mut(*bias).data_mut(), g);
                let mut gcols = vec![S::zero(); rows * patch];
                ops::matmul(
                    g,
                    false,
                    store.get(*weight).data(),
                    true,
                    rows,
                    cs.filters,
                    patch,
                    &mut gcols,
                    false,
                );
                Tensor::new(&[geom.n, geom.h, geom.w, geom.c], ops::col2im(&gcols, geom))
            }
            (LayerSpec::TransposedConv(cs), Params::Affine { weight, bias }, Cache::TransposedConv { geom, input }) => {
                expect_dims(
                    grad_out,
                    &[geom.n, geom.h, geom.w, cs.filters],
                    "transposed-conv backward",
                )?;
                let (n, h, w, c) = input.nhwc()?;
                let rows = n * h * w;
                let patch = geom.patch();
                let gcols = ops::im2col(grad_out.data(), geom);
                ops::matmul(
                    &gcols,
                    true,
                    input.data(),
                    false,
                    patch,
                    rows,
                    c,
                    grads.get_mut(*weight).data_mut(),
                    true,
                );
                accumulate_bias(grads.get_mut(*bias).data_mut(), grad_out.data());
                let mut gx = vec![S::zero(); rows * c];
                ops::matmul(
                    &gcols,
                    false,
                    store.get(*weight).data(),
                    false,
                    rows,
                    patch,
                    c,
                    &mut gx,
                    false,
                );
                Tensor::new(input.dims(), gx)
            }
            (
                LayerSpec::BatchNorm,
                Params::Norm { gamma, beta, .. },
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    train,
                    dims,
                    ..
                },
            ) => {
                expect_dims(grad_out, dims, "batchnorm backward")?;
                let c = self.in_channels;
                let g = grad_out.data();
                let gam = store.get(*gamma).data();
                let mut sum_g = vec![S::zero(); c];
                let mut sum_gx = vec![S::zero(); c];
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        sum_g[ch] += gr[ch];
                        sum_gx[ch] += gr[ch] * xr[ch];
                    }
                }
                for ch in 0..c {
                    grads.get_mut(*gamma).data_mut()[ch] += sum_gx[ch];
                    grads.get_mut(*beta).data_mut()[ch] += sum_g[ch];
                }
                let mut gx = vec![S::zero(); g.len()];
                if *train {
                    let count = S::of((g.len() / c) as f64);
                    for ((o, gr), xr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            o[ch] = gam[ch] * inv_std[ch] / count * (count * gr[ch] - sum_g[ch] - xr[ch] * sum_gx[ch]);
                        }
                    }
                } else {
                    for (o, gr) in gx.chunks_mut(c).zip(g.chunks(c)) {
                        for ch in 0..c {
                            o[ch] = gam[ch] * inv_std[ch] * gr[ch];
                        }
                    }
                }
                Tensor::new(dims, gx)
            }
            (LayerSpec::InstanceNorm, _, Cache::InstanceNorm { xhat, inv_std, dims }) => {
                expect_dims(grad_out, dims, "instance-norm backward")?;
                let c = self.in_channels;
                let per_item = dims[1] * dims[2] * c;
                let count = S::of((per_item / c) as f64);
                let mut gx = vec![S::zero(); grad_out.len()];
                for (j, ((o, g), xh)) in gx
                    .chunks_mut(per_item)
                    .zip(grad_out.data().chunks(per_item))
                    .zip(xhat.chunks(per_item))
                    .enumerate()
                {
                    let mut sum_g = vec![S::zero(); c];
                    let mut sum_gx = vec![S::zero(); c];
                    for (gr, xr) in g.chunks(c).zip(xh.chunks(c)) {
                        for ch in 0..c {
                            sum_g[ch] += gr[ch];
                            sum_gx[ch] += gr[ch] * xr[ch];
                        }
                    }
                    let inv = &inv_std[j * c..(j + 1) * c];
                    for ((or, gr), xr) in o.chunks_mut(c).zip(g.chunks(c)).zip(xh.chunks(c)) {
                        for ch in 0..c {
                            or[ch] = inv[ch] / count * (count * gr[ch] - sum_g[ch] - xr[ch] * sum_gx[ch]);
                        }
                    }
                }
                Tensor::new(dims, gx)
            }
            (LayerSpec::Relu, _, Cache::Rectifier { input }) => {
                grad_out.zip_map(input, |g, x| if x > S::zero() { g } else { S::zero() })
            }
            (LayerSpec::LeakyRelu { slope }, _, Cache::Rectifier { input }) => {
                let a = S::of(*slope);
                grad_out.zip_map(input, |g, x| if x > S::zero() { g } else { a * g })
            }
            (LayerSpec::Sigmoid, _, Cache::Sigmoid { output }) => {
                grad_out.zip_map(output, |g, y| g * y * (S::one() - y))
            }
            (LayerSpec::AvgPool, _, Cache::AvgPool { dims }) => {
                let (n, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
                expect_dims(grad_out, &[n, h / 2, w / 2, c], "avgpool backward")?;
                Tensor::new(dims, ops::avg_pool2_backward(grad_out.data(), n, h, w, c))
            }
            (
                LayerSpec::Residual { .. },
                Params::Residual(children),
                Cache::Residual {
                    children: caches,
                    pre_activation,
                },
            ) => {
                let g_sum = grad_out.zip_map(pre_activation, |g, x| if x > S::zero() { g } else { S::zero() })?;
                let mut g = g_sum.clone();
                for (child, cache) in children.iter().zip(caches).rev() {
                    g = child.backward(store, cache, &g, grads)?;
                }
                g.add_assign(&g_sum)?;
                Ok(g)
            }
            _ => Err(Error::MissingCache(self.spec.name())),
        }
    }

    /// Folds the batch statistics recorded by a train-mode forward pass into
    /// the running statistics.
    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, cache: &Cache<S>) {
        match (&self.params, cache) {
            (
                Params::Norm {
                    running_mean,
                    running_var,
                    ..
                },
                Cache::BatchNorm {
                    batch_mean,
                    batch_var,
                    train: true,
                    dims,
                    ..
                },
            ) => {
                let count = dims.iter().product::<usize>() / self.in_channels;
                let unbias = if count > 1 {
                    S::of(count as f64 / (count - 1) as f64)
                } else {
                    S::one()
                };
                let mom = S::of(BN_MOMENTUM);
                for (r, &b) in store.get_mut(*running_mean).data_mut().iter_mut().zip(batch_mean) {
                    *r = mom * *r + (S::one() - mom) * b;
                }
                for (r, &b) in store.get_mut(*running_var).data_mut().iter_mut().zip(batch_var) {
                    *r = mom * *r + (S::one() - mom) * b * unbias;
                }
            }
            (Params::Residual(children), Cache::Residual { children: caches, .. }) => {
                for (child, c) in children.iter().zip(caches) {
                    child.update_running_stats(store, c);
                }
            }
            _ => {}
        }
    }
}

fn add_bias<S: Scalar>(out: &mut [S], bias: &[S]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn accumulate_bias<S: Scalar>(gb: &mut [S], g: &[S]) {
    let f = gb.len();
    for row in g.chunks(f) {
        for (o, &v) in gb.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn expect_dims<S: Scalar>(t: &Tensor<S>, dims: &[usize], context: &'static str) -> Result<()> {
    if t.dims() != dims {
        return Err(shape_err(context, format!("{dims:?}"), format!("{:?}", t.dims())));
    }
    Ok(())
}
