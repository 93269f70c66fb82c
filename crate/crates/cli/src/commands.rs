//! Implementations behind the subcommands, usable without the binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gtic_core::bitstream::{self, Bitstream};
use gtic_core::tunability::{fit_curve, invert_curve, CurveFit, RatePoint, DEFAULT_DEGREE};
use gtic_core::{EntropyMode, Tensor32};
use rayon::prelude::*;

use crate::dataset::list_images;
use crate::error::{io_err, CliError, Result};
use crate::image_io::{load_image, save_image};
use crate::model_io::Checkpoint;

/// Entropy mode implied by the model's ablation flag and `--fixed-code`.
pub fn entropy_mode(ck: &Checkpoint, fixed_code: bool) -> EntropyMode {
    match (ck.config.entropy, fixed_code) {
        (false, _) => EntropyMode::Raw,
        (true, true) => EntropyMode::FixedTable,
        (true, false) => EntropyMode::Adaptive,
    }
}

pub fn compress_image(ck: &Checkpoint, image: &Tensor32, n: f64, fixed_code: bool) -> Result<Bitstream> {
    Ok(ck.codec().compress(image, n, entropy_mode(ck, fixed_code))?)
}

pub fn compress_file(input: &Path, model: &Path, n: f64, fixed_code: bool, output: &Path) -> Result<Bitstream> {
    let ck = Checkpoint::load(model)?;
    let img = load_image(input)?;
    let bs = compress_image(&ck, &img, n, fixed_code)?;
    std::fs::write(output, bs.to_bytes()).map_err(io_err(output))?;
    Ok(bs)
}

pub fn decompress_bytes(ck: &Checkpoint, bytes: &[u8]) -> Result<Tensor32> {
    Ok(ck.codec().decompress_bytes(bytes)?)
}

pub fn decompress_file(input: &Path, model: &Path, output: &Path) -> Result<Tensor32> {
    let ck = Checkpoint::load(model)?;
    let bytes = std::fs::read(input).map_err(io_err(input))?;
    let img = decompress_bytes(&ck, &bytes)?;
    save_image(&img, output)?;
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub file: String,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

/// Measures every image; rows keep the input order.
pub fn evaluate(ck: &Checkpoint, images: &[(String, Tensor32)], n: f64, fixed_code: bool) -> Result<Vec<EvalRow>> {
    let codec = ck.codec();
    let mode = entropy_mode(ck, fixed_code);
    images
        .par_iter()
        .map(|(file, img)| {
            let (bpp, psnr, msssim) = codec.measure(img, n, mode)?;
            Ok(EvalRow {
                file: file.clone(),
                bpp,
                psnr,
                msssim,
            })
        })
        .collect()
}

/// Images of a directory with their file names.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Tensor32)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned());
            Ok((name, load_image(p)?))
        })
        .collect()
}

/// Averages over the images for every shift of `grid`.
pub fn rd_curve(
    ck: &Checkpoint,
    images: &[(String, Tensor32)],
    grid: &[f64],
    fixed_code: bool,
) -> Result<Vec<RatePoint>> {
    grid.iter()
        .map(|&n| {
            let rows = evaluate(ck, images, n, fixed_code)?;
            let k = rows.len() as f64;
            Ok(RatePoint {
                n,
                bpp: rows.iter().map(|r| r.bpp).sum::<f64>() / k,
                psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / k,
                msssim: rows.iter().map(|r| r.msssim).sum::<f64>() / k,
            })
        })
        .collect()
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("file,bpp,psnr,msssim\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.file, r.bpp, r.psnr, r.msssim).expect("write to string");
    }
    s
}

pub fn curve_csv(points: &[RatePoint]) -> String {
    let mut s = String::from("n,bpp,psnr,msssim\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.n, p.bpp, p.psnr, p.msssim).expect("write to string");
    }
    s
}

/// Reads `n` and `bpp` columns (by header name) from an rd-curve CSV.
pub fn parse_curve_csv(text: &str) -> Result<Vec<RatePoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Csv("empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Csv(format!("missing column `{name}`")))
    };
    let (ci, cb) = (col("n")?, col("bpp")?);
    let (cp, cm) = (
        header.iter().position(|h| *h == "psnr"),
        header.iter().position(|h| *h == "msssim"),
    );
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| -> Result<f64> {
                cells
                    .get(c)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| CliError::Csv(format!("row {}: bad value in column {c}", i + 2)))
            };
            Ok(RatePoint {
                n: get(ci)?,
                bpp: get(cb)?,
                psnr: cp.map(get).transpose()?.unwrap_or(f64::NAN),
                msssim: cm.map(get).transpose()?.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn fit_tunability(csv: &Path, out: &Path) -> Result<CurveFit> {
    let text = std::fs::read_to_string(csv).map_err(io_err(csv))?;
    let fit = fit_curve(&parse_curve_csv(&text)?, DEFAULT_DEGREE)?;
    let json = serde_json::to_string_pretty(&fit).map_err(|e| CliError::Csv(e.to_string()))?;
    std::fs::write(out, json + "\n").map_err(io_err(out))?;
    Ok(fit)
}

pub fn load_fit(path: &Path) -> Result<CurveFit> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn target_bpp(fit: &Path, bpp: f64) -> Result<f64> {
    Ok(invert_curve(&load_fit(fit)?, bpp)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(PathBuf::from(path)))
}

/// Payload re-encoding check: decode `bytes`, re-encode with the same
/// table, compare.
pub fn reencodes_identically(bytes: &[u8]) -> Result<bool> {
    let bs = Bitstream::from_bytes(bytes)?;
    let z = bitstream::decode_stream(&bs)?;
    let info = bitstream::StreamInfo {
        original_height: bs.header.original_height,
        original_width: bs.header.original_width,
        shift: bs.header.shift,
    };
    let again = bitstream::encode_stream(&z, &bs.header.coding, &info)?;
    Ok(again.to_bytes() == bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_csv_round_trip() {
        let pts = vec![
            RatePoint {
                n: -2.0,
                bpp: 0.5,
                psnr: 20.0,
                msssim: 0.8,
            },
            RatePoint {
                n: 0.5,
                bpp: 0.25,
                psnr: 18.5,
                msssim: 0.7,
            },
        ];
        assert_eq!(parse_curve_csv(&curve_csv(&pts)).unwrap(), pts);
        assert!(parse_curve_csv("n,psnr\n0,1\n").is_err());
        assert!(parse_curve_csv("n,bpp\n0,x\n").is_err());
        let minimal = parse_curve_csv("bpp,n\n0.3,1\n").unwrap();
        assert_eq!((minimal[0].n, minimal[0].bpp), (1.0, 0.3));
    }
}
