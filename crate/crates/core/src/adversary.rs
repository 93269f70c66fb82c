//! Multiscale discriminator and the loss terms of the codec objective.

use crate::error::{shape_err, Error, Result};
use crate::nn::{ops, ConvSpec, Gradients, LayerSpec, ParamStore, Sequential, Tape, Tensor};
use crate::pipeline::{config::check_weights, Arch};
use crate::scalar::Scalar;

/// Lower clamp applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-7;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const SCALES: usize = 3;
/// Smallest input side the quarter-scale branch can still reduce three times.
pub const MIN_SIDE: usize = 32;

/// Per-scale discriminator outputs, each in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleScores(pub [f64; SCALES]);

impl ScaleScores {
    pub fn new(scores: [f64; SCALES]) -> Result<Self> {
        if scores.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::Config(format!(
                "discriminator scores must lie in (0, 1), got {scores:?}"
            )));
        }
        Ok(Self(scores))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub betas: [f64; SCALES],
    /// Adversarial weight.
    pub eta: f64,
    /// Distortion weight.
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            betas: [0.5, 0.25, 0.25],
            eta: 1.0,
            kappa: 16.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_weights("beta", &self.betas)?;
        if !(self.eta >= 0.0 && self.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "eta and kappa must be >= 0, got {} and {}",
                self.eta, self.kappa
            )));
        }
        Ok(())
    }
}

fn clamped_ln(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// `sum_i beta_i (log D_i(x) + log(1 - D_i(G(x))))`.
pub fn adversarial_loss(real: &ScaleScores, fake: &ScaleScores, w: &LossWeights) -> f64 {
    (0..SCALES)
        .map(|i| w.betas[i] * (clamped_ln(real.0[i]) + clamped_ln(1.0 - fake.0[i])))
        .sum()
}

/// `d/dr log(max(r, floor))`.
pub fn d_log(r: f64) -> f64 {
    if r > LOG_FLOOR {
        1.0 / r
    } else {
        0.0
    }
}

/// `d/df log(max(1 - f, floor))`.
pub fn d_log_complement(f: f64) -> f64 {
    if 1.0 - f > LOG_FLOOR {
        -1.0 / (1.0 - f)
    } else {
        0.0
    }
}

/// Mean squared error.
pub fn distortion_loss<S: Scalar>(x: &Tensor<S>, xhat: &Tensor<S>) -> Result<f64> {
    x.expect_same_dims(xhat, "distortion loss")?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / x.len() as f64)
}

/// `(1/B) sum_j (eta * L_A_j + kappa * L_D_j)` over `(L_A, L_D)` pairs.
pub fn overall_loss(batch: &[(f64, f64)], w: &LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let total: f64 = batch.iter().map(|(la, ld)| w.eta * la + w.kappa * ld).sum();
    Ok(total / batch.len() as f64)
}

/// Three discriminator branches fed with 1x, 1/2x and 1/4x pooled copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    branches: Vec<Sequential>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTape<S> {
    branches: Vec<Tape<S>>,
    maps: Vec<[usize; 4]>,
    input_dims: [usize; 4],
}

impl Discriminator {
    pub fn build<S: Scalar>(arch: &Arch, seed: u64) -> Result<(Self, ParamStore<S>)> {
        arch.validate()?;
        let w = arch.disc_width;
        let conv = |f, k, s| LayerSpec::Conv(ConvSpec::same(f, k, s));
        let leaky = LayerSpec::LeakyRelu { slope: LEAKY_SLOPE };
        let specs = [
            conv(w / 4, 4, 2),
            leaky,
            conv(w / 2, 4, 2),
            LayerSpec::BatchNorm,
            leaky,
            conv(w, 4, 2),
            LayerSpec::BatchNorm,
            leaky,
            conv(1, 3, 1),
            LayerSpec::Sigmoid,
        ];
        let mut store = ParamStore::new();
        let mut rng = crate::pipeline::seeded_rng(seed, 4);
        let mut branches = Vec::with_capacity(SCALES);
        for i in 0..SCALES {
            branches.push(Sequential::build(
                &specs,
                3,
                &format!("disc.scale{}", i + 1),
                &mut store,
                &mut rng,
            )?);
        }
        Ok((Self { branches }, store))
    }

    /// Scores as a `[B, 3]` tensor.
    pub fn forward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Tensor<S>,
    ) -> Result<(Tensor<S>, DiscriminatorTape<S>)> {
        let (b, h, w, c) = x.nhwc()?;
        if h % 4 != 0 || w % 4 != 0 || h < MIN_SIDE || w < MIN_SIDE || c != 3 {
            return Err(shape_err(
                "discriminator",
                format!("H, W divisible by 4 and >= {MIN_SIDE}, 3 channels"),
                format!("{h}x{w}x{c}"),
            ));
        }
        let mut scores = vec![S::zero(); b * SCALES];
        let mut tapes = Vec::with_capacity(SCALES);
        let mut maps = Vec::with_capacity(SCALES);
        let mut input = x.clone();
        for (i, branch) in self.branches.iter().enumerate() {
            if i > 0 {
                let (n, hh, ww, cc) = input.nhwc()?;
                input = Tensor::new(&[n, hh / 2, ww / 2, cc], ops::avg_pool2(input.data(), n, hh, ww, cc))?;
            }
            let (map, tape) = branch.forward(store, &input)?;
            let (n, mh, mw, _) = map.nhwc()?;
            let per = mh * mw;
            for (j, item) in map.data().chunks(per).enumerate() {
                scores[j * SCALES + i] = item.iter().copied().sum::<S>() / S::of(per as f64);
            }
            maps.push([n, mh, mw, 1]);
            tapes.push(tape);
        }
        Ok((
            Tensor::new(&[b, SCALES], scores)?,
            DiscriminatorTape {
                branches: tapes,
                maps,
                input_dims: [b, h, w, c],
            },
        ))
    }

    /// Single-image convenience wrapper.
    pub fn score_image<S: Scalar>(&self, store: &ParamStore<S>, img: &Tensor<S>) -> Result<ScaleScores> {
        let batch = Tensor::stack(std::slice::from_ref(img))?;
        let (s, _) = self.forward(store, &batch)?;
        let d = s.data();
        ScaleScores::new([d[0].as_f64(), d[1].as_f64(), d[2].as_f64()])
    }

    /// Given `d loss / d scores` (`[B, 3]`), accumulates parameter gradients
    /// and returns `d loss / d input`.
    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        tape: &DiscriminatorTape<S>,
        grad_scores: &Tensor<S>,
        grads: &mut Gradients<S>,
    ) -> Result<Tensor<S>> {
        let [b, h, w, c] = tape.input_dims;
        if grad_scores.dims() != [b, SCALES] {
            return Err(shape_err(
                "discriminator backward",
                format!("[{b}, 3]"),
                format!("{:?}", grad_scores.dims()),
            ));
        }
        let mut carry: Option<Tensor<S>> = None;
        for i in (0..SCALES).rev() {
            let [n, mh, mw, _] = tape.maps[i];
            let per = S::of((mh * mw) as f64);
            let gmap = Tensor::from_fn(&[n, mh, mw, 1], |idx| {
                grad_scores.data()[(idx / (mh * mw)) * SCALES + i] / per
            });
            let mut gin = self.branches[i].backward(store, &tape.branches[i], &gmap, grads)?;
            if let Some(g) = carry.take() {
                gin.add_assign(&g)?;
            }
            if i > 0 {
                let (n, hh, ww, cc) = gin.nhwc()?;
                let (ph, pw) = (hh * 2, ww * 2);
                carry = Some(Tensor::new(
                    &[n, ph, pw, cc],
                    ops::avg_pool2_backward(gin.data(), n, ph, pw, cc),
                )?);
            } else {
                carry = Some(gin);
            }
        }
        let g = carry.expect("at least one scale");
        debug_assert_eq!(g.dims(), &[b, h, w, c]);
        Ok(g)
    }

    pub fn update_running_stats<S: Scalar>(&self, store: &mut ParamStore<S>, tape: &DiscriminatorTape<S>) {
        for (branch, t) in self.branches.iter().zip(&tape.branches) {
            branch.update_running_stats(store, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_loss_examples() {
        let w = LossWeights::default();
        let half = ScaleScores([0.5; 3]);
        let la = adversarial_loss(&half, &half, &w);
        assert!((la - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((la + 1.386).abs() < 1e-3);

        let perfect = adversarial_loss(&ScaleScores([1.0 - 1e-12; 3]), &ScaleScores([1e-12; 3]), &w);
        assert!(perfect.abs() < 1e-9);

        let clamped = adversarial_loss(&half, &ScaleScores([1.0; 3]), &w);
        assert!(clamped.is_finite());
        assert!((clamped - (0.5f64.ln() + LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn distortion_examples() {
        let x = Tensor::<f64>::from_fn(&[4, 4, 3], |i| (i as f64 * 0.37).fract() * 0.8);
        assert_eq!(distortion_loss(&x, &x).unwrap(), 0.0);
        let shifted = x.map(|v| v + 0.1);
        assert!((distortion_loss(&x, &shifted).unwrap() - 0.01).abs() < 1e-12);
        assert!(distortion_loss(&x, &Tensor::zeros(&[4, 4, 2])).is_err());
    }

    #[test]
    fn overall_loss_examples() {
        let w = LossWeights::default();
        let v = overall_loss(&[(-1.386, 0.01)], &w).unwrap();
        assert!((v + 1.226).abs() < 1e-12);
        let no_dist = LossWeights { kappa: 0.0, ..w };
        assert!((overall_loss(&[(-1.0, 5.0), (-3.0, 7.0)], &no_dist).unwrap() + 2.0).abs() < 1e-12);
        let no_gan = LossWeights { eta: 0.0, ..w };
        assert!((overall_loss(&[(-1.0, 0.5), (-3.0, 1.5)], &no_gan).unwrap() - 16.0).abs() < 1e-12);
        assert!(matches!(overall_loss(&[], &w), Err(Error::Empty(_))));
    }

    #[test]
    fn score_range_is_enforced() {
        assert!(ScaleScores::new([0.5, 0.0, 0.5]).is_err());
        assert!(ScaleScores::new([0.5, 0.2, 0.9]).is_ok());
    }
}
