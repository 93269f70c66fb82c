//! Rate sweeps over the importance shift, least-squares characteristic
//! curves and their inversion from a target rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Averaged rate and quality at one shift value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

/// Anything that can compress an image at a given shift and report
/// `(bpp, psnr, ms-ssim)`.
pub trait RateProbe<S: Scalar> {
    fn measure(&self, image: &Tensor<S>, n: f64) -> Result<(f64, f64, f64)>;
}

/// For every shift, compresses each image and averages the measurements.
pub fn sweep_n<S: Scalar, P: RateProbe<S> + ?Sized>(
    probe: &P,
    images: &[Tensor<S>],
    grid: &[f64],
) -> Result<Vec<RatePoint>> {
    if grid.is_empty() {
        return Err(Error::Empty("shift grid"));
    }
    if images.is_empty() {
        return Err(Error::Empty("image set"));
    }
    grid.iter()
        .map(|&n| {
            let mut acc = (0.0, 0.0, 0.0);
            for img in images {
                let (b, p, m) = probe.measure(img, n)?;
                acc = (acc.0 + b, acc.1 + p, acc.2 + m);
            }
            let k = images.len() as f64;
            Ok(RatePoint {
                n,
                bpp: acc.0 / k,
                psnr: acc.1 / k,
                msssim: acc.2 / k,
            })
        })
        .collect()
}

/// Parses `lo:hi:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad grid `{spec}`: {e}")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(Error::Config(format!("grid `{spec}` must be lo:hi:step")));
    };
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("grid `{spec}` needs lo <= hi and step > 0")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

/// Polynomial `bpp(n)` fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    /// Ascending powers of `n`.
    pub coefficients: Vec<f64>,
    pub rmse: f64,
    pub r2: f64,
    pub n_min: f64,
    pub n_max: f64,
}

impl CurveFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, n: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * n + c)
    }
}

pub const DEFAULT_DEGREE: usize = 3;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= scale * 1e-13 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares polynomial of `bpp` in `n` via the normal equations.
pub fn fit_curve(points: &[RatePoint], degree: usize) -> Result<CurveFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.n).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::RankDeficient(format!(
            "degree {degree} needs {} distinct n values, got {}",
            degree + 1,
            distinct.len()
        )));
    }
    let m = degree + 1;
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for p in points {
        let powers: Vec<f64> = (0..m).map(|i| p.n.powi(i as i32)).collect();
        for i in 0..m {
            atb[i] += powers[i] * p.bpp;
            for j in 0..m {
                ata[i][j] += powers[i] * powers[j];
            }
        }
    }
    let coefficients = solve(ata, atb).ok_or_else(|| {
        Error::RankDeficient(format!(
            "singular normal matrix for degree {degree} over n = {distinct:?}"
        ))
    })?;
    let mut fit = CurveFit {
        coefficients,
        rmse: 0.0,
        r2: 1.0,
        n_min: distinct[0],
        n_max: *distinct.last().expect("non-empty"),
    };
    let count = points.len() as f64;
    let mean = points.iter().map(|p| p.bpp).sum::<f64>() / count;
    let ss_res: f64 = points.iter().map(|p| (p.bpp - fit.eval(p.n)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.bpp - mean).powi(2)).sum();
    fit.rmse = (ss_res / count).sqrt();
    fit.r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    Ok(fit)
}

const MONOTONE_SAMPLES: usize = 1000;
pub const INVERT_TOL: f64 = 1e-6;

/// Finds `n` in the fitted range with `bpp(n) = target`.
pub fn invert_curve(fit: &CurveFit, target: f64) -> Result<f64> {
    let (lo, hi) = (fit.n_min, fit.n_max);
    let samples: Vec<f64> = (0..=MONOTONE_SAMPLES)
        .map(|i| fit.eval(lo + (hi - lo) * i as f64 / MONOTONE_SAMPLES as f64))
        .collect();
    let increasing = samples.windows(2).all(|w| w[1] > w[0]);
    let decreasing = samples.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::NonMonotone { lo, hi });
    }
    let (f_lo, f_hi) = (fit.eval(lo), fit.eval(hi));
    let (min, max) = (f_lo.min(f_hi), f_lo.max(f_hi));
    if !(target >= min - INVERT_TOL && target <= max + INVERT_TOL) {
        return Err(Error::TargetOutOfRange { target, min, max });
    }
    if (f_lo - target).abs() < INVERT_TOL * 1e-3 {
        return Ok(lo);
    }
    if (f_hi - target).abs() < INVERT_TOL * 1e-3 {
        return Ok(hi);
    }
    // g(n) = bpp(n) - target changes sign on [a, b]
    let (mut a, mut b) = (lo, hi);
    let sign_lo = (f_lo - target).signum();
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (fit.eval(mid) - target).signum() == sign_lo {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64, grid: &[f64]) -> Vec<RatePoint> {
        grid.iter()
            .map(|&n| RatePoint {
                n,
                bpp: f(n),
                psnr: 30.0,
                msssim: 0.9,
            })
            .collect()
    }

    #[test]
    fn recovers_a_line() {
        let grid = parse_grid("-2:2:0.5").unwrap();
        let fit = fit_curve(&pts(|n| 0.2 - 0.05 * n, &grid), 3).unwrap();
        assert!(fit.rmse < 1e-9);
        assert!((fit.coefficients[0] - 0.2).abs() < 1e-9);
        assert!((fit.coefficients[1] + 0.05).abs() < 1e-9);
        assert!((invert_curve(&fit, 0.25).unwrap() + 1.0).abs() < 1e-6);
        assert_eq!(invert_curve(&fit, fit.eval(-2.0)).unwrap(), -2.0);
    }

    #[test]
    fn constant_points_fit_the_mean() {
        let p: Vec<RatePoint> = [(0.0, 1.0), (1.0, 2.0), (2.0, 4.0), (0.5, 1.0)]
            .iter()
            .map(|&(n, b)| RatePoint {
                n,
                bpp: b,
                psnr: 0.0,
                msssim: 0.0,
            })
            .collect();
        let fit = fit_curve(&p, 0).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let p = pts(|n| n, &[0.0, 0.0, 1.0]);
        assert!(matches!(fit_curve(&p, 3), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn inversion_errors() {
        let grid = parse_grid("-2:2:0.5").unwrap();
        let fit = fit_curve(&pts(|n| 0.2 - 0.05 * n, &grid), 1).unwrap();
        assert!(matches!(invert_curve(&fit, 1.0), Err(Error::TargetOutOfRange { .. })));
        let bowl = fit_curve(&pts(|n| n * n, &grid), 2).unwrap();
        assert!(matches!(invert_curve(&bowl, 1.0), Err(Error::NonMonotone { .. })));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-2:2:0.5").unwrap().len(), 9);
        assert_eq!(parse_grid("0:0:1").unwrap(), vec![0.0]);
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }
}
