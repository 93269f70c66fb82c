//! Low-level kernels over NHWC buffers: patch extraction, strided products,
//! pooling and normalization.

use crate::scalar::Scalar;

/// Geometry of a square-kernel convolution over an NHWC batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

impl ConvGeom {
    pub fn new(n: usize, h: usize, w: usize, c: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let oh = conv_out_dim(h, kernel, stride, pad)?;
        let ow = conv_out_dim(w, kernel, stride, pad)?;
        Some(Self {
            n,
            h,
            w,
            c,
            kernel,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c
    }

    /// Calls `f(row, col, src)` for every in-bounds patch element.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let patch = self.patch();
        for b in 0..self.n {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = (b * self.oh + oy) * self.ow + ox;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.c;
                            let col = (ky * k + kx) * self.c;
                            f(row * patch + col, src, self.c);
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds input patches into a `rows x patch` matrix.
pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Vec<S> {
    let mut cols = vec![S::zero(); g.rows() * g.patch()];
    g.for_each_tap(|dst, src, c| cols[dst..dst + c].copy_from_slice(&x[src..src + c]));
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the input grid.
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom) -> Vec<S> {
    let mut x = vec![S::zero(); g.n * g.h * g.w * g.c];
    g.for_each_tap(|dst, src, c| {
        for (o, &v) in x[src..src + c].iter_mut().zip(&cols[dst..dst + c]) {
            *o += v;
        }
    });
    x
}

/// `c = a * b` (or `c += a * b` when `accumulate`), row-major, optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn matmul<S: Scalar>(
    a: &[S],
    trans_a: bool,
    b: &[S],
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [S],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// 2x2 average pooling with stride 2 over NHWC data; dims must be even.
pub fn avg_pool2<S: Scalar>(x: &[S], n: usize, h: usize, w: usize, c: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::of(0.25);
    let mut out = vec![S::zero(); n * oh * ow * c];
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                let dst = ((b * oh + y) * ow + xo) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c;
                    for ch in 0..c {
                        out[dst + ch] += x[src + ch];
                    }
                }
                for v in &mut out[dst..dst + c] {
                    *v *= quarter;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(g: &[S], n: usize, h: usize, w: usize, c: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::of(0.25);
    let mut out = vec![S::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                let src = ((b * oh + y) * ow + xo) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c;
                    for ch in 0..c {
                        out[dst + ch] = g[src + ch] * quarter;
                    }
                }
            }
        }
    }
    out
}

pub fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Per-channel mean and biased variance over all leading positions.
pub fn channel_moments<S: Scalar>(x: &[S], c: usize) -> (Vec<S>, Vec<S>) {
    let count = S::of((x.len() / c) as f64);
    let mut mean = vec![S::zero(); c];
    for row in x.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![S::zero(); c];
    for row in x.chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut var {
        *s /= count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_follow_floor_formula() {
        assert_eq!(conv_out_dim(6, 3, 1, 1), Some(6));
        assert_eq!(conv_out_dim(6, 3, 2, 1), Some(3));
        assert_eq!(conv_out_dim(32, 5, 2, 2), Some(16));
        assert_eq!(conv_out_dim(32, 4, 2, 1), Some(16));
        assert_eq!(conv_out_dim(2, 5, 1, 0), None);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(2, 5, 4, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4 * 3).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.rows() * g.patch()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn moments_of_known_data() {
        let (m, v) = channel_moments(&[1.0f64, 10.0, 3.0, 10.0], 2);
        assert_eq!(m, vec![2.0, 10.0]);
        assert_eq!(v, vec![1.0, 0.0]);
    }
}
