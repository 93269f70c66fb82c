use crate::error::{Error, Result};

use super::symbols::check_depth;

/// Network sizing. The reference sizing uses 256-wide feature maps and 15
/// decoder residual blocks; desk-scale runs shrink both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    /// Widest feature count; narrower stages use `width / 2` and `width / 4`.
    pub width: usize,
    pub decoder_blocks: usize,
    pub masker_blocks: usize,
    /// Widest discriminator feature count.
    pub disc_width: usize,
}

impl Arch {
    pub const REFERENCE: Arch = Arch {
        width: 256,
        decoder_blocks: 15,
        masker_blocks: 2,
        disc_width: 256,
    };

    pub const TOY: Arch = Arch {
        width: 32,
        decoder_blocks: 2,
        masker_blocks: 2,
        disc_width: 16,
    };

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || !self.width.is_multiple_of(4) || self.disc_width < 4 || !self.disc_width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "widths must be positive multiples of 4: width={} disc_width={}",
                self.width, self.disc_width
            )));
        }
        Ok(())
    }
}

/// How the non-differentiable quantizer and mask threshold behave in
/// [`super::Pipeline::forward_train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateMode {
    /// Hard forward pass; no backward pass available.
    Off,
    /// Hard forward pass, surrogate gradients backward.
    StraightThrough,
    /// Surrogates in both directions: clamp for the quantizer and a linear
    /// ramp per channel for the mask. Used to verify the surrogate gradients.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub channels: usize,
    pub depth: u8,
    pub alphas: [f64; 3],
    pub shift: f64,
    pub surrogate: SurrogateMode,
    /// Masker ablation switch; when off every channel is kept.
    pub use_masker: bool,
    pub arch: Arch,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            depth: 2,
            alphas: [0.5, 0.25, 0.25],
            shift: 0.0,
            surrogate: SurrogateMode::StraightThrough,
            use_masker: true,
            arch: Arch::REFERENCE,
        }
    }
}

pub(crate) fn check_weights(name: &str, w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{name} weights must be positive and sum to 1, got {w:?}"
        )));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels > u16::MAX as usize {
            return Err(Error::Config(format!("K must lie in 1..=65535, got {}", self.channels)));
        }
        check_depth(self.depth)?;
        check_weights("alpha", &self.alphas)?;
        self.arch.validate()
    }
}
