//! Binary PPM (P6, maxval 255) reading and writing; PNG behind the `png`
//! feature. Pixels map to `[0, 1]` as `v / 255`.

use std::path::Path;

use gtic_core::Tensor32;
use thiserror::Error;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("not a binary PPM (magic {0:?})")]
    BadMagic(String),
    #[error("unsupported image format {0}")]
    Unsupported(String),
    #[error("malformed PPM header: {0}")]
    BadHeader(String),
    #[error("maxval {0} unsupported (only 255)")]
    MaxVal(u32),
    #[error("pixel data truncated: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("expected an H x W x 3 image, got {0:?}")]
    Shape(Vec<usize>),
    #[error("png: {0}")]
    Png(String),
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::BadHeader(format!("missing or invalid {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor32, ImageError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    match magic {
        b"P6" => {}
        b"P3" => return Err(ImageError::Unsupported("P3 (ASCII pixmap)".into())),
        _ => return Err(ImageError::BadMagic(String::from_utf8_lossy(magic).into_owned())),
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ImageError::MaxVal(maxval));
    }
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(ImageError::BadHeader("no whitespace after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| ImageError::BadHeader(format!("dimensions {width}x{height} overflow")))?;
    let data = &bytes[r.pos..];
    if data.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let values = data[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor32::new(&[height, width, 3], values).expect("dims match data"))
}

fn to_bytes(img: &Tensor32) -> Result<(usize, usize, Vec<u8>), ImageError> {
    match *img.dims() {
        [h, w, 3] => Ok((
            h,
            w,
            img.data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        )),
        ref d => Err(ImageError::Shape(d.to_vec())),
    }
}

pub fn encode_ppm(img: &Tensor32) -> Result<Vec<u8>, ImageError> {
    let (h, w, px) = to_bytes(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn load_image(path: &Path) -> Result<Tensor32> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let wrap = |source| CliError::Image {
        path: path.to_path_buf(),
        source,
    };
    if is_png(path) {
        return png::decode(&bytes).map_err(wrap);
    }
    decode_ppm(&bytes).map_err(wrap)
}

pub fn save_image(img: &Tensor32, path: &Path) -> Result<()> {
    let wrap = |source| CliError::Image {
        path: path.to_path_buf(),
        source,
    };
    let bytes = if is_png(path) {
        png::encode(img).map_err(wrap)?
    } else {
        encode_ppm(img).map_err(wrap)?
    };
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// File extensions the loader accepts.
pub fn supported_extension(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm") => true,
        Some("png") => cfg!(feature = "png"),
        _ => false,
    }
}

#[cfg(feature = "png")]
mod png {
    use super::*;

    pub fn decode(bytes: &[u8]) -> Result<Tensor32, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ImageError::Png(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let values = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Ok(Tensor32::new(&[h as usize, w as usize, 3], values).expect("dims match data"))
    }

    pub fn encode(img: &Tensor32) -> Result<Vec<u8>, ImageError> {
        let (h, w, px) = to_bytes(img)?;
        let buf = image::RgbImage::from_raw(w as u32, h as u32, px).expect("dims match data");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImageError::Png(e.to_string()))?;
        Ok(out.into_inner())
    }
}

#[cfg(not(feature = "png"))]
mod png {
    use super::*;

    pub fn decode(_: &[u8]) -> Result<Tensor32, ImageError> {
        Err(ImageError::Unsupported("PNG (built without the `png` feature)".into()))
    }

    pub fn encode(_: &Tensor32) -> Result<Vec<u8>, ImageError> {
        Err(ImageError::Unsupported("PNG (built without the `png` feature)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_round_trip() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0, 255, 128, 10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.dims(), &[1, 2, 3]);
        assert_eq!(img.data()[0], 0.0);
        assert_eq!(img.data()[1], 1.0);
        assert_eq!(
            encode_ppm(&img).unwrap(),
            b"P6\n2 1\n255\n\x00\xff\x80\x0a\x14\x1e".to_vec()
        );
    }

    #[test]
    fn save_load_error_is_within_half_a_level() {
        let img = Tensor32::from_fn(&[3, 5, 3], |i| ((i as f32) * 0.0731).fract());
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(worst <= 1.0 / 510.0 + 1e-7);
    }

    #[test]
    fn distinct_rejections() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n0 0 0"),
            Err(ImageError::Unsupported(_))
        ));
        assert!(matches!(decode_ppm(b"GIF89a"), Err(ImageError::BadMagic(_))));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(ImageError::MaxVal(65535))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\0\0\0"),
            Err(ImageError::Truncated { expected: 12, found: 3 })
        ));
        assert!(matches!(decode_ppm(b"P6\nx 2\n255\n"), Err(ImageError::BadHeader(_))));
        assert!(matches!(decode_ppm(b"P6\n0 2\n255\n"), Err(ImageError::BadHeader(_))));
    }
}
