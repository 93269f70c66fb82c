//! Central finite-difference verification of analytic gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layer::Layer;
use super::params::{EntryKind, Gradients, ParamStore};
use super::tensor::Tensor;

/// Denominator floor for the relative error of near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(tensor name, max relative error)`; the input gradient is named `input`.
    pub errors: Vec<(String, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.errors.iter().all(|e| e.1 < self.tol)
    }

    pub fn failures(&self) -> Vec<&(String, f64)> {
        self.errors.iter().filter(|e| e.1 >= self.tol).collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn check_step(step: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step must lie in [1e-6, 1e-4], got {step}"
        )));
    }
    Ok(())
}

fn probed_indices(len: usize, max_entries: usize) -> Vec<usize> {
    if len <= max_entries {
        (0..len).collect()
    } else {
        (0..max_entries).map(|i| i * len / max_entries).collect()
    }
}

/// Compares analytic gradients of a scalar `loss(store, input)` against
/// central differences.
///
/// At most `max_entries` evenly spaced elements of each tensor are probed.
#[allow(clippy::too_many_arguments)]
pub fn compare_with_finite_differences(
    store: &ParamStore<f64>,
    input: &Tensor<f64>,
    analytic_params: &Gradients<f64>,
    analytic_input: Option<&Tensor<f64>>,
    loss: impl Fn(&ParamStore<f64>, &Tensor<f64>) -> Result<f64>,
    step: f64,
    tol: f64,
    max_entries: usize,
) -> Result<GradCheckReport> {
    check_step(step)?;
    let mut errors = Vec::new();
    let mut probe = store.clone();
    for id in store.trainable_ids() {
        let mut worst = 0.0f64;
        for j in probed_indices(store.get(id).len(), max_entries) {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + step;
            let up = loss(&probe, input)?;
            probe.get_mut(id).data_mut()[j] = orig - step;
            let down = loss(&probe, input)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic_params.get(id).data()[j], numeric));
        }
        errors.push((store.entries()[id.index()].name.clone(), worst));
    }
    if let Some(gin) = analytic_input {
        let mut worst = 0.0f64;
        let mut x = input.clone();
        for j in probed_indices(input.len(), max_entries) {
            let orig = input.data()[j];
            x.data_mut()[j] = orig + step;
            let up = loss(store, &x)?;
            x.data_mut()[j] = orig - step;
            let down = loss(store, &x)?;
            x.data_mut()[j] = orig;
            worst = worst.max(relative_error(gin.data()[j], (up - down) / (2.0 * step)));
        }
        errors.push(("input".to_string(), worst));
    }
    Ok(GradCheckReport { errors, tol })
}

/// Checks one layer's backward pass on the loss `sum(probe * layer(input))`,
/// where `probe` is a fixed pseudo-random weighting (a plain sum would make
/// batchnorm gradients vanish identically).
pub fn finite_diff_check(
    layer: &Layer,
    store: &ParamStore<f64>,
    input: &Tensor<f64>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    check_step(step)?;
    let (out, cache) = layer.forward(store, input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let probe = Tensor::from_fn(out.dims(), |_| rng.gen_range(-1.0..1.0));
    let mut grads = Gradients::zeros_like(store);
    let gin = layer.backward(store, &cache, &probe, &mut grads)?;
    let loss = |s: &ParamStore<f64>, x: &Tensor<f64>| -> Result<f64> {
        let (y, _) = layer.forward(s, x)?;
        Ok(y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };
    let mut report = compare_with_finite_differences(store, input, &grads, Some(&gin), loss, step, tol, usize::MAX)?;
    // Running statistics are not differentiated.
    report.errors.retain(|(name, _)| {
        store
            .id(name)
            .is_none_or(|id| store.entries()[id.index()].kind == EntryKind::Trainable)
    });
    Ok(report)
}
