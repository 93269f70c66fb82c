//! Alternating adversarial training of encoder, masker and decoder against
//! the multiscale discriminator.

use std::path::PathBuf;

use gtic_core::adversary::{d_log, d_log_complement, distortion_loss, LOG_FLOOR, SCALES};
use gtic_core::nn::{Gradients, Tensor};
use gtic_core::Tensor32;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NMode;
use crate::dataset::{random_crop, Dataset};
use crate::error::{CliError, Result};
use crate::model_io::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: u64,
    pub n: f64,
    pub mse: f64,
    /// Batch-mean `L_A`; 0 when the GAN is off.
    pub adversarial: f64,
    /// Extremes of every discriminator score seen in this step.
    pub score_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub mean_mse: f64,
    pub mean_adversarial: f64,
    pub score_range: (f64, f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Written after every `checkpoint_every` epochs and at the end.
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: usize,
}

fn batch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    rng.set_stream(epoch as u64);
    rng
}

fn make_batch(data: &Dataset, idx: &[usize], crop: usize, rng: &mut ChaCha8Rng) -> Result<Tensor32> {
    let items: Vec<Tensor32> = idx
        .iter()
        .map(|&i| {
            if crop == 0 {
                data.images[i].clone()
            } else {
                random_crop(&data.images[i], crop, rng)
            }
        })
        .collect();
    if items.windows(2).any(|w| w[0].dims() != w[1].dims()) {
        return Err(CliError::Data(
            "images of different sizes in one batch; set `crop` to train on fixed-size crops".into(),
        ));
    }
    Ok(Tensor::stack(&items)?)
}

fn score_range(scores: &[&Tensor32]) -> (f64, f64) {
    scores
        .iter()
        .flat_map(|t| t.data().iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s as f64), hi.max(s as f64))
        })
}

/// Continues training `ck` on `data` until its configured epoch count or
/// step limit, reporting every batch to `observe`.
pub fn train(
    data: &Dataset,
    mut ck: Checkpoint,
    opts: &TrainOptions,
    mut observe: impl FnMut(&StepInfo),
) -> Result<(Checkpoint, TrainReport)> {
    if data.is_empty() {
        return Err(CliError::Data("empty dataset".into()));
    }
    let cfg = ck.config.clone();
    cfg.validate()?;
    let weights = cfg.loss_weights();
    let gan = cfg.gan && weights.eta > 0.0;
    let mut report = TrainReport::default();
    while ck.epoch < cfg.epochs {
        if cfg.max_steps > 0 && ck.step >= cfg.max_steps as u64 {
            break;
        }
        let epoch = ck.epoch;
        ck.set_learning_rate();
        let order = data.order(cfg.seed, epoch);
        let mut rng = batch_rng(cfg.seed, epoch);
        let mut stats = EpochStats {
            epoch,
            batches: 0,
            mean_mse: 0.0,
            mean_adversarial: 0.0,
            score_range: (f64::INFINITY, f64::NEG_INFINITY),
        };
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && ck.step >= cfg.max_steps as u64 {
                break;
            }
            let batch_index = ck.step as usize;
            let x = make_batch(data, idx, cfg.crop, &mut rng)?;
            let n = match cfg.n_mode {
                NMode::Tunable => rng.gen_range(-2.0..=2.0),
                NMode::Fixed => cfg.n,
            };
            let info = step(&mut ck, &x, n, gan, batch_index)?;
            stats.batches += 1;
            stats.mean_mse += info.mse;
            stats.mean_adversarial += info.adversarial;
            stats.score_range.0 = stats.score_range.0.min(info.score_range.0);
            stats.score_range.1 = stats.score_range.1.max(info.score_range.1);
            observe(&StepInfo { epoch, ..info });
        }
        if stats.batches == 0 {
            break;
        }
        stats.mean_mse /= stats.batches as f64;
        stats.mean_adversarial /= stats.batches as f64;
        info!(
            "epoch {epoch}: mse {:.5} adversarial {:.4} over {} batches",
            stats.mean_mse, stats.mean_adversarial, stats.batches
        );
        report.epochs.push(stats);
        ck.epoch += 1;
        if let Some(path) = &opts.checkpoint_path {
            if opts.checkpoint_every > 0 && ck.epoch.is_multiple_of(opts.checkpoint_every) {
                ck.save(path)?;
            }
        }
    }
    if let Some(path) = &opts.checkpoint_path {
        ck.save(path)?;
    }
    Ok((ck, report))
}

fn non_finite(batch: usize, what: &str) -> CliError {
    CliError::NonFinite {
        batch,
        what: what.to_string(),
    }
}

fn guard<T>(r: gtic_core::Result<T>, batch: usize) -> Result<T> {
    r.map_err(|e| match e {
        gtic_core::Error::NonFinite(what) => non_finite(batch, &what),
        other => other.into(),
    })
}

/// One discriminator update followed by one generator update.
fn step(ck: &mut Checkpoint, x: &Tensor32, n: f64, gan: bool, batch: usize) -> Result<StepInfo> {
    let cfg = &ck.config;
    let w = cfg.loss_weights();
    let b = x.dims()[0];
    let inv_b = 1.0 / b as f64;
    let pass = guard(ck.pipeline.forward_train(&ck.params, x, n), batch)?;
    let xhat = &pass.reconstruction;
    let mse = distortion_loss(x, xhat)?;
    if !mse.is_finite() {
        return Err(non_finite(batch, "distortion loss"));
    }

    let mut adversarial = 0.0;
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut grad_xhat = xhat.zip_map(x, |a, c| a - c)?;
    grad_xhat.scale((2.0 * w.kappa / x.len() as f64) as f32);

    if gan {
        let disc = &ck.discriminator;
        let (real, real_tape) = guard(disc.forward(&ck.disc_params, x), batch)?;
        let (fake, fake_tape) = guard(disc.forward(&ck.disc_params, xhat), batch)?;
        range = score_range(&[&real, &fake]);
        let mut g_real = Tensor32::zeros(&[b, SCALES]);
        let mut g_fake = Tensor32::zeros(&[b, SCALES]);
        for j in 0..b {
            for i in 0..SCALES {
                let (r, f) = (real.data()[j * SCALES + i] as f64, fake.data()[j * SCALES + i] as f64);
                adversarial += w.betas[i] * (r.max(LOG_FLOOR).ln() + (1.0 - f).max(LOG_FLOOR).ln()) * inv_b;
                // the discriminator ascends L_A
                g_real.data_mut()[j * SCALES + i] = (-w.betas[i] * d_log(r) * inv_b) as f32;
                g_fake.data_mut()[j * SCALES + i] = (-w.betas[i] * d_log_complement(f) * inv_b) as f32;
            }
        }
        if !adversarial.is_finite() {
            return Err(non_finite(batch, "adversarial loss"));
        }
        let mut dg = Gradients::zeros_like(&ck.disc_params);
        guard(disc.backward(&ck.disc_params, &real_tape, &g_real, &mut dg), batch)?;
        guard(disc.backward(&ck.disc_params, &fake_tape, &g_fake, &mut dg), batch)?;
        disc.update_running_stats(&mut ck.disc_params, &real_tape);
        disc.update_running_stats(&mut ck.disc_params, &fake_tape);
        guard(ck.optimizers.discriminator.step(&mut ck.disc_params, &dg), batch)?;

        // generator term against the updated discriminator
        let (fake, tape) = guard(disc.forward(&ck.disc_params, xhat), batch)?;
        let r2 = score_range(&[&fake]);
        range = (range.0.min(r2.0), range.1.max(r2.1));
        let mut g_scores = Tensor32::zeros(&[b, SCALES]);
        for j in 0..b {
            for i in 0..SCALES {
                let f = fake.data()[j * SCALES + i] as f64;
                let g = if cfg.non_saturating {
                    -d_log(f)
                } else {
                    d_log_complement(f)
                };
                g_scores.data_mut()[j * SCALES + i] = (w.eta * w.betas[i] * g * inv_b) as f32;
            }
        }
        let mut scratch = Gradients::zeros_like(&ck.disc_params);
        let g_in = guard(disc.backward(&ck.disc_params, &tape, &g_scores, &mut scratch), batch)?;
        grad_xhat.add_assign(&g_in)?;
    }

    let grads = guard(ck.pipeline.backward(&ck.params, &pass, &grad_xhat), batch)?;
    ck.pipeline.update_running_stats(&mut ck.params, &pass);
    guard(
        ck.optimizers.encoder.step(&mut ck.params.encoder, &grads.encoder),
        batch,
    )?;
    if ck.config.masker {
        guard(ck.optimizers.masker.step(&mut ck.params.masker, &grads.masker), batch)?;
    }
    guard(
        ck.optimizers.decoder.step(&mut ck.params.decoder, &grads.decoder),
        batch,
    )?;
    if !ck.params.is_finite() || !ck.disc_params.is_finite() {
        return Err(non_finite(batch, "parameters"));
    }
    ck.step += 1;
    Ok(StepInfo {
        epoch: ck.epoch,
        step: ck.step,
        n,
        mse,
        adversarial,
        score_range: range,
    })
}
