//! Reconstruction quality metrics for unit-range images.

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn image_dims<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, context: &'static str) -> Result<(usize, usize, usize)> {
    x.expect_same_dims(y, context)?;
    match *x.dims() {
        [h, w, c] => Ok((h, w, c)),
        ref d => Err(shape_err(context, "h x w x c image", format!("{d:?}"))),
    }
}

pub fn mse<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    x.expect_same_dims(y, "mse")?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Peak signal-to-noise ratio at unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    image_dims(x, y, "psnr")?;
    let e = mse(x, y)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Single-channel plane.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel<S: Scalar>(x: &Tensor<S>, ch: usize) -> Self {
        let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        Self {
            h,
            w,
            v: x.data().iter().skip(ch).step_by(c).map(|v| v.as_f64()).collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable "valid" Gaussian filtering.
    fn filter(&self, taps: &[f64; SSIM_WINDOW]) -> Plane {
        let k = SSIM_WINDOW;
        let ow = self.w - k + 1;
        let oh = self.h - k + 1;
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                rows[y * ow + x] = (0..k).map(|i| taps[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, v: out }
    }

    /// 2x2 box filter with symmetric edge extension, then every other sample.
    fn downsample(&self) -> Plane {
        let (oh, ow) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let at = |y: usize, x: usize| self.v[y.min(self.h - 1) * self.w + x.min(self.w - 1)];
        let mut v = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = (2 * y, 2 * x);
                v.push(0.25 * (at(sy, sx) + at(sy, sx + 1) + at(sy + 1, sx) + at(sy + 1, sx + 1)));
            }
        }
        Plane { h: oh, w: ow, v }
    }
}

/// `(mean SSIM, mean contrast-structure)` at one scale.
fn ssim_components(a: &Plane, b: &Plane, taps: &[f64; SSIM_WINDOW]) -> (f64, f64) {
    let mu_a = a.filter(taps);
    let mu_b = b.filter(taps);
    let aa = a.zip(a, |x, y| x * y).filter(taps);
    let bb = b.zip(b, |x, y| x * y).filter(taps);
    let ab = a.zip(b, |x, y| x * y).filter(taps);
    let n = mu_a.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let c = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

/// Number of scales usable for an image whose smaller side is `min_dim`.
pub fn ms_ssim_levels(min_dim: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .filter(|&l| min_dim >= SSIM_WINDOW << (l - 1))
        .max()
        .unwrap_or(0)
}

/// Multi-scale structural similarity, averaged over channels.
///
/// Small images use fewer scales with the exponent weights renormalized to
/// sum to one; negative per-scale terms are clamped to zero.
pub fn ms_ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    let (h, w, c) = image_dims(x, y, "ms-ssim")?;
    let levels = ms_ssim_levels(h.min(w));
    if levels == 0 {
        return Err(shape_err(
            "ms-ssim",
            format!("min side >= {SSIM_WINDOW}"),
            format!("{h}x{w}"),
        ));
    }
    let weights = &MS_SSIM_WEIGHTS[..levels];
    let norm: f64 = weights.iter().sum();
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..c {
        let (mut a, mut b) = (Plane::channel(x, ch), Plane::channel(y, ch));
        let mut value = 1.0;
        for (level, &wt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_components(&a, &b, &taps);
            let term = if level + 1 == levels { ssim } else { cs };
            value *= term.max(0.0).powf(wt / norm);
            if level + 1 < levels {
                a = a.downsample();
                b = b.downsample();
            }
        }
        total += value;
    }
    Ok((total / c as f64).clamp(0.0, 1.0))
}
