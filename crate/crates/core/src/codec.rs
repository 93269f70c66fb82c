//! Image-level compression: padding, hard analysis chain, bitstream
//! serialization and reconstruction.

use crate::bitstream::{self, Bitstream, Coding, StreamInfo, TableMode};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{ms_ssim, psnr};
use crate::nn::Tensor;
use crate::pipeline::{GeneratorParams, Pipeline};
use crate::scalar::Scalar;
use crate::tunability::RateProbe;

pub const SHIFT_RANGE: (f64, f64) = (-2.0, 2.0);
/// Total downsampling factor of the encoder.
pub const BLOCK: usize = 8;

/// How the masked code is entropy coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyMode {
    #[default]
    FixedTable,
    Adaptive,
    /// Fixed-width symbols with no entropy coding.
    Raw,
}

pub fn padded_dim(d: usize) -> usize {
    d.div_ceil(BLOCK) * BLOCK
}

/// Pads an `H x W x C` image to multiples of 8 by replicating the last
/// row and column.
pub fn pad_to_block<S: Scalar>(img: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w, c) = image_hwc(img, "pad")?;
    let (ph, pw) = (padded_dim(h), padded_dim(w));
    if (ph, pw) == (h, w) {
        return Ok(img.clone());
    }
    let src = img.data();
    Ok(Tensor::from_fn(&[ph, pw, c], |i| {
        let (y, x, ch) = (i / (pw * c), (i / c) % pw, i % c);
        src[(y.min(h - 1) * w + x.min(w - 1)) * c + ch]
    }))
}

/// Keeps the top-left `h x w` window.
pub fn crop<S: Scalar>(img: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (ih, iw, c) = image_hwc(img, "crop")?;
    if h > ih || w > iw {
        return Err(shape_err("crop", format!("at least {h}x{w}"), format!("{ih}x{iw}")));
    }
    let src = img.data();
    Ok(Tensor::from_fn(&[h, w, c], |i| {
        let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
        src[(y * iw + x) * c + ch]
    }))
}

fn image_hwc<S: Scalar>(img: &Tensor<S>, context: &'static str) -> Result<(usize, usize, usize)> {
    match *img.dims() {
        [h, w, c] => Ok((h, w, c)),
        ref d => Err(shape_err(context, "h x w x c image", format!("{d:?}"))),
    }
}

pub fn check_shift(n: f64) -> Result<()> {
    if n.is_finite() && (SHIFT_RANGE.0..=SHIFT_RANGE.1).contains(&n) {
        Ok(())
    } else {
        Err(Error::ShiftOutOfRange(n))
    }
}

/// A trained pipeline bundled with its parameters.
#[derive(Debug, Clone)]
pub struct Codec<S> {
    pub pipeline: Pipeline,
    pub params: GeneratorParams<S>,
}

impl<S: Scalar> Codec<S> {
    pub fn new(pipeline: Pipeline, params: GeneratorParams<S>) -> Self {
        Self { pipeline, params }
    }

    pub fn compress(&self, image: &Tensor<S>, n: f64, entropy: EntropyMode) -> Result<Bitstream> {
        check_shift(n)?;
        let (h, w, c) = image_hwc(image, "compress")?;
        if c != 3 {
            return Err(shape_err("compress", "3 channels", c.to_string()));
        }
        image.ensure_finite("input image")?;
        let padded = pad_to_block(image)?;
        let analysis = self.pipeline.analyze(&self.params, &padded, n)?;
        let info = StreamInfo {
            original_height: dim_u32(h)?,
            original_width: dim_u32(w)?,
            shift: n as f32,
        };
        let bs = match entropy {
            EntropyMode::FixedTable => bitstream::encode_with_mode(&analysis.masked, TableMode::Unary, &info)?,
            EntropyMode::Adaptive => bitstream::encode_with_mode(&analysis.masked, TableMode::Adaptive, &info)?,
            EntropyMode::Raw => bitstream::encode_stream(&analysis.masked, &Coding::Raw, &info)?,
        };
        Ok(bs)
    }

    pub fn decompress(&self, bs: &Bitstream) -> Result<Tensor<S>> {
        let cfg = self.pipeline.config();
        let (k, l) = (bs.header.channels as usize, bs.header.depth);
        if k != cfg.channels || l != cfg.depth {
            return Err(Error::CodeMismatch {
                found_channels: k,
                found_depth: l,
                model_channels: cfg.channels,
                model_depth: cfg.depth,
            });
        }
        let z = bitstream::decode_stream(bs)?;
        let xhat = self.pipeline.decode(&self.params, &z)?;
        crop(
            &xhat,
            bs.header.original_height as usize,
            bs.header.original_width as usize,
        )
    }

    pub fn decompress_bytes(&self, bytes: &[u8]) -> Result<Tensor<S>> {
        self.decompress(&Bitstream::from_bytes(bytes)?)
    }
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| shape_err("compress", "dimension below 2^32", d.to_string()))
}

impl<S: Scalar> Codec<S> {
    /// `(bpp, psnr, ms-ssim)` of one compress/decompress round trip.
    pub fn measure(&self, image: &Tensor<S>, n: f64, entropy: EntropyMode) -> Result<(f64, f64, f64)> {
        let bs = self.compress(image, n, entropy)?;
        let rec = self.decompress(&bs)?;
        Ok((bitstream::bpp(&bs), psnr(image, &rec)?, ms_ssim(image, &rec)?))
    }
}

/// A codec paired with the entropy mode used for rate measurements.
#[derive(Debug, Clone, Copy)]
pub struct CodecProbe<'a, S> {
    pub codec: &'a Codec<S>,
    pub entropy: EntropyMode,
}

impl<S: Scalar> RateProbe<S> for CodecProbe<'_, S> {
    fn measure(&self, image: &Tensor<S>, n: f64) -> Result<(f64, f64, f64)> {
        self.codec.measure(image, n, self.entropy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_replicates_edges() {
        let img = Tensor::<f64>::from_fn(&[9, 10, 1], |i| i as f64);
        let p = pad_to_block(&img).unwrap();
        assert_eq!(p.dims(), &[16, 16, 1]);
        assert_eq!(p.data()[15 * 16 + 15], img.data()[8 * 10 + 9]);
        assert_eq!(p.data()[3 * 16 + 12], img.data()[3 * 10 + 9]);
        assert_eq!(crop(&p, 9, 10).unwrap(), img);
    }

    #[test]
    fn aligned_images_pass_through() {
        let img = Tensor::<f32>::from_fn(&[8, 16, 3], |i| i as f32);
        assert_eq!(pad_to_block(&img).unwrap(), img);
        assert_eq!((padded_dim(65), padded_dim(63), padded_dim(1)), (72, 64, 8));
    }

    #[test]
    fn shift_bounds() {
        assert!(check_shift(-2.0).is_ok() && check_shift(2.0).is_ok());
        assert!(check_shift(2.01).is_err() && check_shift(f64::NAN).is_err());
    }
}
