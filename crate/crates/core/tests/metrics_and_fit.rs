use gtic_core::metrics::{ms_ssim, psnr};
use gtic_core::nn::Tensor;
use gtic_core::tunability::{fit_curve, invert_curve, CurveFit, RatePoint};
use gtic_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[h, w, 3], |i| {
        let (y, x, c) = ((i / (w * 3)) as f64, ((i / 3) % w) as f64, (i % 3) as f64);
        0.5 + 0.3 * (0.11 * x + 0.07 * y + c).sin() * (0.05 * y).cos()
    })
}

#[test]
fn quality_falls_as_noise_grows() {
    let x = smooth(64, 80);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let unit: Vec<f64> = (0..x.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut last = (f64::INFINITY, f64::INFINITY);
    for amp in [0.01, 0.03, 0.1, 0.3] {
        let y = Tensor::from_fn(x.dims(), |i| (x.data()[i] + amp * unit[i]).clamp(0.0, 1.0));
        let now = (psnr(&x, &y).unwrap(), ms_ssim(&x, &y).unwrap());
        assert!(now.0 < last.0 && now.1 < last.1, "{amp}: {now:?} after {last:?}");
        last = now;
    }
}

#[test]
fn metric_shape_errors() {
    let a = smooth(16, 16);
    assert!(psnr(&a, &smooth(16, 24)).is_err());
    assert!(ms_ssim(&smooth(8, 8), &smooth(8, 8)).is_err());
}

fn points(f: impl Fn(f64) -> f64) -> Vec<RatePoint> {
    (0..=16)
        .map(|i| {
            let n = -2.0 + 0.25 * i as f64;
            RatePoint {
                n,
                bpp: f(n),
                psnr: 0.0,
                msssim: 0.0,
            }
        })
        .collect()
}

fn monotone_fit(a: f64, b: f64, d: f64) -> CurveFit {
    // b, d > 0 keeps the derivative -b - 3 d n^2 negative everywhere
    fit_curve(&points(|n| a - b * n - d * n.powi(3)), 3).unwrap()
}

proptest! {
    #[test]
    fn exact_cubics_are_recovered(c in prop::array::uniform4(-1.0f64..1.0)) {
        let f = |n: f64| c[0] + c[1] * n + c[2] * n * n + c[3] * n.powi(3);
        let fit = fit_curve(&points(f), 3).unwrap();
        for (got, want) in fit.coefficients.iter().zip(c) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        prop_assert!(fit.rmse < 1e-9);
    }

    #[test]
    fn inversion_lands_on_the_target(a in 0.2f64..1.0, b in 0.01f64..0.2, d in 0.0f64..0.01, t in 0.0f64..1.0) {
        let fit = monotone_fit(a, b, d);
        let (lo, hi) = (fit.eval(2.0), fit.eval(-2.0));
        let target = lo + t * (hi - lo);
        let n = invert_curve(&fit, target).unwrap();
        prop_assert!((-2.0..=2.0).contains(&n));
        prop_assert!((fit.eval(n) - target).abs() < 1e-6);
    }
}

#[test]
fn out_of_range_target_reports_the_achievable_span() {
    let fit = monotone_fit(0.5, 0.1, 0.0);
    match invert_curve(&fit, 2.0) {
        Err(Error::TargetOutOfRange { min, max, .. }) => {
            assert!((min - 0.3).abs() < 1e-9 && (max - 0.7).abs() < 1e-9, "{min} {max}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_monotone_fit_is_refused() {
    let fit = fit_curve(&points(|n| 0.3 + 0.1 * n * n), 3).unwrap();
    assert!(matches!(invert_curve(&fit, 0.35), Err(Error::NonMonotone { .. })));
}
