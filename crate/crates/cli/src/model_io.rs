//! `GTICMDL` tensor container and the training checkpoint stored in it.
//!
//! Layout (little-endian): magic `GTICMDL`, version u8, tensor count u32,
//! then per tensor: name length u16, name bytes, rank u8, dims u32 each,
//! f32 values.

use std::collections::HashMap;
use std::path::Path;

use gtic_core::adversary::Discriminator;
use gtic_core::nn::{Algorithm, EntryKind, Mode, Optimizer, ParamStore, Tensor};
use gtic_core::{Codec32, GeneratorParams, Pipeline, Tensor32};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::error::{io_err, Result};

pub const MODEL_MAGIC: &[u8; 7] = b"GTICMDL";
pub const MODEL_VERSION: u8 = 1;
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("not a model file (magic {0:?})")]
    BadMagic(Vec<u8>),
    #[error("model format version {found} unsupported; this build reads version {expected}")]
    UnsupportedVersion { found: u8, expected: u8 },
    #[error("model truncated while reading {0}")]
    Truncated(String),
    #[error("tensor `{name}` dims {dims:?} overflow")]
    DimOverflow { name: String, dims: Vec<u64> },
    #[error("tensor `{name}` has invalid rank {rank}")]
    BadRank { name: String, rank: u8 },
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("unexpected tensor `{0}`")]
    Unexpected(String),
    #[error("tensor `{name}` has dims {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("bad metadata: {0}")]
    BadMeta(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

pub fn write_container(tensors: &[(String, Tensor32)]) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();
    out.push(MODEL_VERSION);
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.dims() {
            out.extend((d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<(String, Tensor32)>, ModelError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c
        .take(MODEL_MAGIC.len(), "magic")
        .map_err(|_| ModelError::BadMagic(bytes.to_vec()))?;
    if magic != MODEL_MAGIC {
        return Err(ModelError::BadMagic(magic.to_vec()));
    }
    let version = c.take(1, "version")?[0];
    if version != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = u16::from_le_bytes(c.take(2, &format!("name length of tensor {i}"))?.try_into().expect("2"));
        let name = std::str::from_utf8(c.take(len as usize, "tensor name")?)
            .map_err(|_| ModelError::BadName)?
            .to_string();
        let rank = c.take(1, &format!("rank of `{name}`"))?[0];
        if !(1..=4).contains(&rank) {
            return Err(ModelError::BadRank { name, rank });
        }
        let dims: Vec<u64> = (0..rank)
            .map(|_| c.u32(&format!("dims of `{name}`")).map(u64::from))
            .collect::<Result<_, _>>()?;
        let total = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&t| t <= MAX_ELEMENTS);
        let total = match total {
            Some(t) if dims.iter().all(|&d| d > 0) => t as usize,
            _ => return Err(ModelError::DimOverflow { name, dims }),
        };
        let raw = c.take(total * 4, &format!("values of `{name}`"))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let t = Tensor::new(&dims, values).map_err(|_| ModelError::DimOverflow {
            name: name.clone(),
            dims: dims.iter().map(|&d| d as u64).collect(),
        })?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(ModelError::TrailingBytes(bytes.len() - c.pos));
    }
    Ok(out)
}

fn text_tensor(text: &str) -> Tensor32 {
    Tensor::new(&[text.len()], text.bytes().map(f32::from).collect()).expect("non-empty text")
}

fn tensor_text(name: &str, t: &Tensor32) -> Result<String, ModelError> {
    let bytes: Option<Vec<u8>> = t
        .data()
        .iter()
        .map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8))
        .collect();
    bytes
        .and_then(|b| String::from_utf8(b).ok())
        .ok_or_else(|| ModelError::BadMeta(format!("`{name}` is not text")))
}

/// Optimizer state for each trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub encoder: Optimizer<f32>,
    pub masker: Optimizer<f32>,
    pub decoder: Optimizer<f32>,
    pub discriminator: Optimizer<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub pipeline: Pipeline,
    pub params: GeneratorParams<f32>,
    pub discriminator: Discriminator,
    pub disc_params: ParamStore<f32>,
    pub optimizers: Optimizers,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches.
    pub step: u64,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

const STORES: [&str; 4] = ["encoder", "masker", "decoder", "discriminator"];

impl Checkpoint {
    /// Freshly initialized networks for `cfg`.
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (pipeline, params) = Pipeline::build::<f32>(cfg.pipeline(), cfg.seed)?;
        let (discriminator, disc_params) = Discriminator::build::<f32>(&cfg.arch(), cfg.seed)?;
        let lr = cfg.learning_rate(0);
        let optimizers = Optimizers {
            encoder: Optimizer::new(Algorithm::Adam, lr, &params.encoder),
            masker: Optimizer::new(Algorithm::Adam, lr, &params.masker),
            decoder: Optimizer::new(Algorithm::Adam, lr, &params.decoder),
            discriminator: Optimizer::new(Algorithm::Adam, lr, &disc_params),
        };
        Ok(Self {
            config: cfg.clone(),
            pipeline,
            params,
            discriminator,
            disc_params,
            optimizers,
            epoch: 0,
            step: 0,
        })
    }

    fn parts(&self) -> [(&ParamStore<f32>, &Optimizer<f32>); 4] {
        [
            (&self.params.encoder, &self.optimizers.encoder),
            (&self.params.masker, &self.optimizers.masker),
            (&self.params.decoder, &self.optimizers.decoder),
            (&self.disc_params, &self.optimizers.discriminator),
        ]
    }

    fn parts_mut(&mut self) -> [(&mut ParamStore<f32>, &mut Optimizer<f32>); 4] {
        [
            (&mut self.params.encoder, &mut self.optimizers.encoder),
            (&mut self.params.masker, &mut self.optimizers.masker),
            (&mut self.params.decoder, &mut self.optimizers.decoder),
            (&mut self.disc_params, &mut self.optimizers.discriminator),
        ]
    }

    pub fn tensors(&self) -> Vec<(String, Tensor32)> {
        let mut out = vec![
            ("meta.config".to_string(), text_tensor(&self.config.to_text())),
            (
                "meta.progress".to_string(),
                text_tensor(&format!("{} {}", self.epoch, self.step)),
            ),
        ];
        for (store, _) in self.parts() {
            for e in store.entries() {
                out.push((e.name.clone(), e.value.clone()));
            }
        }
        for (label, (store, opt)) in STORES.iter().zip(self.parts()) {
            out.push((format!("adam.{label}.step"), text_tensor(&opt.step.to_string())));
            for (i, e) in store.entries().iter().enumerate() {
                if e.kind == EntryKind::Trainable {
                    out.push((format!("adam.{label}.m.{}", e.name), opt.first[i].clone()));
                    out.push((format!("adam.{label}.v.{}", e.name), opt.second[i].clone()));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_container(&self.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let list = read_container(bytes)?;
        let mut map: HashMap<String, Tensor32> = HashMap::with_capacity(list.len());
        for (name, t) in list {
            if map.contains_key(&name) {
                return Err(ModelError::Duplicate(name).into());
            }
            map.insert(name, t);
        }
        let mut take = |name: &str| map.remove(name).ok_or_else(|| ModelError::Missing(name.to_string()));
        let config_text = tensor_text("meta.config", &take("meta.config")?)?;
        let config = TrainConfig::parse(&config_text)?;
        let progress = tensor_text("meta.progress", &take("meta.progress")?)?;
        let (epoch, step) = progress
            .split_once(' ')
            .and_then(|(e, s)| Some((e.parse().ok()?, s.parse().ok()?)))
            .ok_or_else(|| ModelError::BadMeta(format!("progress `{progress}`")))?;
        let mut ck = Self::fresh(&config)?;
        ck.epoch = epoch;
        ck.step = step;
        for (label, (store, opt)) in STORES.iter().zip(ck.parts_mut()) {
            let names: Vec<(String, EntryKind)> = store.entries().iter().map(|e| (e.name.clone(), e.kind)).collect();
            for (i, (name, kind)) in names.iter().enumerate() {
                let t = take(name)?;
                check_dims(name, store.entries()[i].value.dims(), &t)?;
                store.assign(name, t)?;
                if *kind == EntryKind::Trainable {
                    for (tag, slot) in [("m", &mut opt.first[i]), ("v", &mut opt.second[i])] {
                        let key = format!("adam.{label}.{tag}.{name}");
                        let t = take(&key)?;
                        check_dims(&key, slot.dims(), &t)?;
                        *slot = t;
                    }
                }
            }
            let key = format!("adam.{label}.step");
            let text = tensor_text(&key, &take(&key)?)?;
            opt.step = text
                .parse()
                .map_err(|_| ModelError::BadMeta(format!("`{key}` = `{text}`")))?;
        }
        if let Some(name) = map.keys().min() {
            return Err(ModelError::Unexpected(name.clone()).into());
        }
        ck.set_learning_rate();
        Ok(ck)
    }

    /// Sets every optimizer to the scheduled rate for the current epoch.
    pub fn set_learning_rate(&mut self) {
        let lr = self.config.learning_rate(self.epoch);
        for (_, opt) in self.parts_mut() {
            opt.learning_rate = lr;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }

    /// The generator side in inference mode.
    pub fn codec(&self) -> Codec32 {
        let mut params = self.params.clone();
        params.set_mode(Mode::Inference);
        Codec32::new(self.pipeline.clone(), params)
    }
}

fn check_dims(name: &str, expected: &[usize], t: &Tensor32) -> Result<(), ModelError> {
    if t.dims() != expected {
        return Err(ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: t.dims().to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;

    fn tiny() -> TrainConfig {
        TrainConfig {
            width: 8,
            disc_width: 8,
            decoder_blocks: 1,
            masker_blocks: 1,
            ..TrainConfig::toy()
        }
    }

    #[test]
    fn container_round_trip() {
        let ts = vec![
            ("a".to_string(), Tensor32::from_fn(&[2, 3], |i| i as f32 - 1.5)),
            ("b.c".to_string(), Tensor32::scalar(7.0)),
        ];
        let bytes = write_container(&ts);
        assert_eq!(&bytes[..7], b"GTICMDL");
        assert_eq!(read_container(&bytes).unwrap(), ts);
    }

    #[test]
    fn container_errors_are_distinct() {
        let bytes = write_container(&[("w".to_string(), Tensor32::from_fn(&[4], |i| i as f32))]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_container(&bad), Err(ModelError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[7] = MODEL_VERSION + 1;
        let err = read_container(&bad).unwrap_err();
        assert_eq!(err, ModelError::UnsupportedVersion { found: 2, expected: 1 });
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
        assert!(matches!(
            read_container(&bytes[..bytes.len() - 1]),
            Err(ModelError::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(read_container(&bad), Err(ModelError::DimOverflow { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_container(&long), Err(ModelError::TrailingBytes(1))));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut ck = Checkpoint::fresh(&tiny()).unwrap();
        ck.epoch = 3;
        ck.step = 41;
        ck.optimizers.decoder.step = 41;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!((back.epoch, back.step, back.optimizers.decoder.step), (3, 41, 41));
    }

    #[test]
    fn checkpoint_detects_missing_and_extra_tensors() {
        let ck = Checkpoint::fresh(&tiny()).unwrap();
        let mut ts = ck.tensors();
        ts.push(("stray".into(), Tensor32::scalar(0.0)));
        let err = Checkpoint::from_bytes(&write_container(&ts)).unwrap_err();
        assert!(matches!(err, CliError::Model(ModelError::Unexpected(_))));
        let mut ts = ck.tensors();
        ts.retain(|(n, _)| n != "dec.0.bias");
        let err = Checkpoint::from_bytes(&write_container(&ts)).unwrap_err();
        assert!(matches!(err, CliError::Model(ModelError::Missing(_))));
    }
}
