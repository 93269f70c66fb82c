//! Quantization, importance masking and the integer code tensors they produce.

use log::warn;

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Denominator guard of the importance normalization.
pub const NORM_EPS: f64 = 1e-6;

/// Largest quantization depth; keeps the symbol alphabet (plus terminator)
/// within a byte.
pub const MAX_DEPTH: u8 = 7;

/// Integer tensor of shape `h x w x k`, stored row-major with channels last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl SymbolGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0; height * width * channels],
        }
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.data[self.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: u8) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(&self.dims(), self.data.iter().map(|&v| S::of(v as f64)).collect()).expect("grid dims are non-zero")
    }
}

/// Quantizer output: symbols in `{0, .., 2^depth - 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCode {
    pub depth: u8,
    pub grid: SymbolGrid,
}

/// Quantized code with the importance mask applied; the entropy coder's payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedCodeTensor {
    pub depth: u8,
    pub grid: SymbolGrid,
}

impl MaskedCodeTensor {
    pub fn alphabet_size(&self) -> usize {
        1 << self.depth
    }
}

/// Per-position importance in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub shift: f64,
}

/// Binary channel-prefix expansion of an [`ImportanceMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportanceMatrix {
    pub grid: SymbolGrid,
}

impl ImportanceMatrix {
    pub fn ones(height: usize, width: usize, channels: usize) -> Self {
        Self {
            grid: SymbolGrid {
                height,
                width,
                channels,
                data: vec![1; height * width * channels],
            },
        }
    }

    pub fn count_ones(&self) -> usize {
        self.grid.data.iter().map(|&b| b as usize).sum()
    }
}

pub fn max_symbol(depth: u8) -> f64 {
    ((1u32 << depth) - 1) as f64
}

/// Nearest level in `{0, .., 2^depth - 1}`; ties round up, out-of-range
/// values clamp to the nearest end.
pub fn quantize_value(v: f64, depth: u8) -> u8 {
    let top = max_symbol(depth);
    if v.is_nan() || v <= 0.0 {
        return 0;
    }
    if v >= top {
        return top as u8;
    }
    (v + 0.5).floor().min(top) as u8
}

/// Quantizes an `h x w x K` code tensor.
pub fn quantize<S: Scalar>(omega: &Tensor<S>, depth: u8) -> Result<QuantizedCode> {
    let (h, w, k) = match omega.dims() {
        &[h, w, k] => (h, w, k),
        d => return Err(shape_err("quantize", "h x w x K code tensor", format!("{d:?}"))),
    };
    check_depth(depth)?;
    Ok(QuantizedCode {
        depth,
        grid: SymbolGrid {
            height: h,
            width: w,
            channels: k,
            data: omega.data().iter().map(|v| quantize_value(v.as_f64(), depth)).collect(),
        },
    })
}

pub fn check_depth(depth: u8) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(crate::error::Error::Config(format!(
            "quantization depth L must lie in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    Ok(())
}

pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    (mean, var.sqrt())
}

/// Normalizes the masker logits with their mean shifted by `shift` and maps
/// them through the logistic function.
pub fn importance_map<S: Scalar>(y: &Tensor<S>, shift: f64) -> Result<ImportanceMap> {
    let (h, w) = match y.dims() {
        &[h, w] | &[h, w, 1] => (h, w),
        d => return Err(shape_err("importance map", "h x w (x 1) logits", format!("{d:?}"))),
    };
    if !(-2.0..=2.0).contains(&shift) {
        warn!("importance shift n = {shift} lies outside [-2, 2]");
    }
    let vals: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
    let (mean, std) = mean_std(&vals);
    let denom = std + NORM_EPS;
    Ok(ImportanceMap {
        height: h,
        width: w,
        values: vals.iter().map(|v| logistic((v - mean - shift) / denom)).collect(),
        shift,
    })
}

/// Channel `k` (1-based) is kept where `m >= (k - 1) / K`.
pub fn expand_importance(m: &ImportanceMap, channels: usize) -> ImportanceMatrix {
    let mut grid = SymbolGrid::zeros(m.height, m.width, channels);
    for (pos, &v) in m.values.iter().enumerate() {
        for k in 0..channels {
            if v >= k as f64 / channels as f64 {
                grid.data[pos * channels + k] = 1;
            }
        }
    }
    ImportanceMatrix { grid }
}

pub fn apply_mask(q: &QuantizedCode, mask: &ImportanceMatrix) -> Result<MaskedCodeTensor> {
    if q.grid.dims() != mask.grid.dims() {
        return Err(shape_err(
            "apply mask",
            format!("{:?}", q.grid.dims()),
            format!("{:?}", mask.grid.dims()),
        ));
    }
    let mut grid = q.grid.clone();
    for (z, &b) in grid.data.iter_mut().zip(&mask.grid.data) {
        *z *= b;
    }
    Ok(MaskedCodeTensor { depth: q.depth, grid })
}
