//! Image sets: directory loading, deterministic per-epoch order and crops.

use std::path::{Path, PathBuf};

use gtic_core::codec::pad_to_block;
use gtic_core::Tensor32;
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, CliError, Result};
use crate::image_io::{load_image, supported_extension};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub paths: Vec<PathBuf>,
    /// Images padded to multiples of 8.
    pub images: Vec<Tensor32>,
}

/// Independent stream for epoch-level randomness.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x100 + epoch as u64);
    rng
}

/// Sorted image files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && supported_extension(p))
        .collect();
    paths.sort();
    Ok(paths)
}

impl Dataset {
    pub fn from_images(images: Vec<Tensor32>) -> Result<Self> {
        if images.is_empty() {
            return Err(CliError::Data("no images".into()));
        }
        let paths = (0..images.len())
            .map(|i| PathBuf::from(format!("<memory {i}>")))
            .collect();
        let images = images.iter().map(pad_to_block).collect::<Result<_, _>>()?;
        Ok(Self { paths, images })
    }

    /// Loads every readable image of `dir`; unreadable files are skipped
    /// with a warning.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        let mut images = Vec::new();
        for p in list_images(dir)? {
            match load_image(&p).and_then(|img| Ok(pad_to_block(&img)?)) {
                Ok(img) => {
                    paths.push(p);
                    images.push(img);
                }
                Err(e) => warn!("skipping {}: {e}", p.display()),
            }
        }
        if images.is_empty() {
            return Err(CliError::Data(format!("no readable images in {}", dir.display())));
        }
        Ok(Self { paths, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image order for `epoch`.
    pub fn order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut epoch_rng(seed, epoch));
        idx
    }
}

/// Smooth test images: a few random oriented sinusoids per channel over a
/// colour gradient, values in `[0, 1]`.
pub fn synthetic_images(count: usize, side: usize, seed: u64) -> Vec<Tensor32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: [f32; 3] = [
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
            ];
            let tilt: [f32; 2] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let waves: Vec<(f32, f32, f32, f32, usize)> = (0..3)
                .map(|_| {
                    let angle = rng.gen_range(0.0..std::f32::consts::TAU);
                    let freq = rng.gen_range(0.05..0.4);
                    (
                        angle.cos() * freq,
                        angle.sin() * freq,
                        rng.gen_range(0.0..6.3),
                        rng.gen_range(0.05..0.2),
                        rng.gen_range(0..3),
                    )
                })
                .collect();
            Tensor32::from_fn(&[side, side, 3], |i| {
                let (y, x, c) = ((i / (side * 3)) as f32, ((i / 3) % side) as f32, i % 3);
                let t = side as f32;
                let mut v = base[c] + tilt[0] * (y / t - 0.5) + tilt[1] * (x / t - 0.5);
                for &(fy, fx, phase, amp, ch) in &waves {
                    let gain = if ch == c { 1.0 } else { 0.4 };
                    v += gain * amp * (fy * y + fx * x + phase).sin();
                }
                v.clamp(0.0, 1.0)
            })
        })
        .collect()
}

/// A `side x side` window at a random offset; images smaller than the crop
/// are edge-extended first.
pub fn random_crop(img: &Tensor32, side: usize, rng: &mut impl Rng) -> Tensor32 {
    let (h, w) = (img.dims()[0], img.dims()[1]);
    let y0 = rng.gen_range(0..=h.saturating_sub(side));
    let x0 = rng.gen_range(0..=w.saturating_sub(side));
    let src = img.data();
    Tensor32::from_fn(&[side, side, 3], |i| {
        let (y, x, c) = (i / (side * 3), (i / 3) % side, i % 3);
        src[((y0 + y).min(h - 1) * w + (x0 + x).min(w - 1)) * 3 + c]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_a_seeded_permutation() {
        let ds = Dataset::from_images(vec![Tensor32::zeros(&[8, 8, 3]); 10]).unwrap();
        let a = ds.order(1, 0);
        assert_eq!(a, ds.order(1, 0));
        assert_ne!(a, ds.order(1, 1));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn crops_stay_inside_or_extend_edges() {
        let img = Tensor32::from_fn(&[16, 24, 3], |i| i as f32);
        let mut rng = epoch_rng(0, 0);
        for _ in 0..20 {
            let c = random_crop(&img, 8, &mut rng);
            assert_eq!(c.dims(), &[8, 8, 3]);
        }
        let small = Tensor32::from_fn(&[8, 8, 3], |i| i as f32);
        let c = random_crop(&small, 16, &mut rng);
        assert_eq!(c.data()[(15 * 16 + 15) * 3], small.data()[(7 * 8 + 7) * 3]);
    }

    #[test]
    fn padding_on_load() {
        let ds = Dataset::from_images(vec![Tensor32::zeros(&[9, 17, 3])]).unwrap();
        assert_eq!(ds.images[0].dims(), &[16, 24, 3]);
    }
}
