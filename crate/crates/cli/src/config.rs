//! Training configuration: two built-in profiles and a flat `key = value`
//! text format whose keys are the field names of [`TrainConfig`].

use std::fmt::Write as _;

use gtic_core::adversary::LossWeights;
use gtic_core::codec::check_shift;
use gtic_core::{Arch, PipelineConfig, SurrogateMode};

use crate::error::{CliError, Result};

/// How the importance shift is chosen per training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NMode {
    /// Drawn uniformly from [-2, 2] before every batch.
    Tunable,
    /// Held at `TrainConfig::n`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub channels: usize,
    pub depth: u8,
    pub batch_size: usize,
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    pub eta: f64,
    pub kappa: f64,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_switch_epoch: usize,
    pub lr_final: f64,
    pub n_mode: NMode,
    pub n: f64,
    pub gan: bool,
    pub masker: bool,
    pub entropy: bool,
    /// Use `-log D(fake)` for the generator instead of `log(1 - D(fake))`.
    pub non_saturating: bool,
    pub seed: u64,
    pub width: usize,
    pub decoder_blocks: usize,
    pub masker_blocks: usize,
    pub disc_width: usize,
    /// Square training crop side; 0 trains on whole (padded) images.
    pub crop: usize,
    /// Stop after this many batches; 0 means no limit.
    pub max_steps: usize,
}

impl TrainConfig {
    /// Full-scale settings.
    pub fn reference() -> Self {
        Self {
            channels: 16,
            depth: 2,
            batch_size: 8,
            alpha: [0.5, 0.25, 0.25],
            beta: [0.5, 0.25, 0.25],
            eta: 1.0,
            kappa: 16.0,
            epochs: 128,
            lr_initial: 2e-3,
            lr_switch_epoch: 64,
            lr_final: 2e-4,
            n_mode: NMode::Tunable,
            n: 0.0,
            gan: true,
            masker: true,
            entropy: true,
            non_saturating: false,
            seed: 0,
            width: Arch::REFERENCE.width,
            decoder_blocks: Arch::REFERENCE.decoder_blocks,
            masker_blocks: Arch::REFERENCE.masker_blocks,
            disc_width: Arch::REFERENCE.disc_width,
            crop: 0,
            max_steps: 0,
        }
    }

    /// Desk-scale settings: small networks, 32x32 crops, K = 4, B = 4.
    pub fn toy() -> Self {
        Self {
            channels: 4,
            batch_size: 4,
            epochs: 500,
            lr_switch_epoch: 250,
            width: Arch::TOY.width,
            decoder_blocks: Arch::TOY.decoder_blocks,
            masker_blocks: Arch::TOY.masker_blocks,
            disc_width: Arch::TOY.disc_width,
            crop: 32,
            max_steps: 2000,
            ..Self::reference()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "toy" => Ok(Self::toy()),
            other => Err(CliError::Config(format!(
                "unknown profile `{other}` (expected reference or toy)"
            ))),
        }
    }

    pub fn arch(&self) -> Arch {
        Arch {
            width: self.width,
            decoder_blocks: self.decoder_blocks,
            masker_blocks: self.masker_blocks,
            disc_width: self.disc_width,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            channels: self.channels,
            depth: self.depth,
            alphas: self.alpha,
            shift: self.n,
            surrogate: SurrogateMode::StraightThrough,
            use_masker: self.masker,
            arch: self.arch(),
        }
    }

    /// Loss weights with the adversarial term removed when the GAN is off.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            betas: self.beta,
            eta: if self.gan { self.eta } else { 0.0 },
            kappa: self.kappa,
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.lr_switch_epoch {
            self.lr_initial
        } else {
            self.lr_final
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        for (name, v) in [("lr_initial", self.lr_initial), ("lr_final", self.lr_final)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.n_mode == NMode::Fixed {
            check_shift(self.n)?;
        }
        if self.crop != 0 && !self.crop.is_multiple_of(8) {
            return bad(format!("crop must be a multiple of 8, got {}", self.crop));
        }
        if self.gan && self.crop != 0 && self.crop < gtic_core::adversary::MIN_SIDE {
            return bad(format!(
                "the discriminator needs crops of at least {}, got {}",
                gtic_core::adversary::MIN_SIDE,
                self.crop
            ));
        }
        self.pipeline().validate()?;
        self.loss_weights().validate()?;
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. A `profile` line resets
    /// every field and is only allowed before any other key.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        let mut seen_other = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got `{line}`", lineno + 1)))?;
            let at = |e: CliError| match e {
                CliError::Config(m) => CliError::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            };
            if key == "profile" {
                if seen_other {
                    return Err(at(CliError::Config("`profile` must come before other keys".into())));
                }
                self = Self::profile(value).map_err(at)?;
                continue;
            }
            seen_other = true;
            self.set(key, value).map_err(at)?;
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::reference().apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "channels" => self.channels = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "alpha" => self.alpha = triple(key, value)?,
            "beta" => self.beta = triple(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_initial" => self.lr_initial = num(key, value)?,
            "lr_switch_epoch" => self.lr_switch_epoch = num(key, value)?,
            "lr_final" => self.lr_final = num(key, value)?,
            "n_mode" => {
                self.n_mode = match value {
                    "tunable" => NMode::Tunable,
                    "fixed" => NMode::Fixed,
                    _ => {
                        return Err(CliError::Config(format!(
                            "n_mode must be tunable or fixed, got `{value}`"
                        )))
                    }
                }
            }
            "n" => self.n = num(key, value)?,
            "gan" => self.gan = flag(key, value)?,
            "masker" => self.masker = flag(key, value)?,
            "entropy" => self.entropy = flag(key, value)?,
            "non_saturating" => self.non_saturating = flag(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "decoder_blocks" => self.decoder_blocks = num(key, value)?,
            "masker_blocks" => self.masker_blocks = num(key, value)?,
            "disc_width" => self.disc_width = num(key, value)?,
            "crop" => self.crop = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let triple = |v: [f64; 3]| format!("{:?},{:?},{:?}", v[0], v[1], v[2]);
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        line("channels", self.channels.to_string());
        line("depth", self.depth.to_string());
        line("batch_size", self.batch_size.to_string());
        line("alpha", triple(self.alpha));
        line("beta", triple(self.beta));
        line("eta", format!("{:?}", self.eta));
        line("kappa", format!("{:?}", self.kappa));
        line("epochs", self.epochs.to_string());
        line("lr_initial", format!("{:?}", self.lr_initial));
        line("lr_switch_epoch", self.lr_switch_epoch.to_string());
        line("lr_final", format!("{:?}", self.lr_final));
        line(
            "n_mode",
            match self.n_mode {
                NMode::Tunable => "tunable".into(),
                NMode::Fixed => "fixed".into(),
            },
        );
        line("n", format!("{:?}", self.n));
        line("gan", self.gan.to_string());
        line("masker", self.masker.to_string());
        line("entropy", self.entropy.to_string());
        line("non_saturating", self.non_saturating.to_string());
        line("seed", self.seed.to_string());
        line("width", self.width.to_string());
        line("decoder_blocks", self.decoder_blocks.to_string());
        line("masker_blocks", self.masker_blocks.to_string());
        line("disc_width", self.disc_width.to_string());
        line("crop", self.crop.to_string());
        line("max_steps", self.max_steps.to_string());
        s
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}` expects true/false, got `{value}`"))),
    }
}

fn triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| CliError::Config(format!("`{key}` expects three comma-separated numbers")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid_and_round_trip() {
        for cfg in [TrainConfig::reference(), TrainConfig::toy()] {
            cfg.validate().unwrap();
            assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn reference_profile_values() {
        let p = TrainConfig::reference();
        assert_eq!((p.channels, p.depth, p.batch_size, p.epochs), (16, 2, 8, 128));
        assert_eq!((p.lr_initial, p.lr_switch_epoch, p.lr_final), (2e-3, 64, 2e-4));
        assert_eq!(p.learning_rate(63), 2e-3);
        assert_eq!(p.learning_rate(64), 2e-4);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg =
            TrainConfig::parse("profile = toy\n# comment\nchannels = 8 # trailing\ngan = off\nalpha = 0.6, 0.2, 0.2\n")
                .unwrap();
        assert_eq!(cfg.channels, 8);
        assert!(!cfg.gan);
        assert_eq!(cfg.alpha, [0.6, 0.2, 0.2]);
        assert_eq!(cfg.loss_weights().eta, 0.0);
        assert_eq!(cfg.width, Arch::TOY.width);
    }

    #[test]
    fn rejections() {
        for text in [
            "chanels = 4",
            "channels",
            "batch_size = 0",
            "lr_final = 0",
            "n_mode = fixed\nn = 3",
            "channels = 4\nprofile = toy",
            "gan = maybe",
            "alpha = 0.5, 0.5",
            "depth = 9",
        ] {
            assert!(TrainConfig::parse(text).is_err(), "{text}");
        }
    }
}
