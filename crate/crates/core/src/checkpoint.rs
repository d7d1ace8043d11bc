//! Binary checkpoint format.
//!
//! ```text
//! "PAE1"                  4 bytes magic
//! version                 u16 little-endian
//! header length           u32 little-endian
//! header                  JSON: hyperparameters, optimizer settings,
//!                         and an array manifest (name, dtype, shape,
//!                         byte offset into the data section)
//! data                    raw little-endian arrays
//! ```
//!
//! Loading rebuilds the model from the recorded configuration and refuses
//! any array whose dtype or shape disagrees with it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classical::ProductCodeParams;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelConfig, ProductAe, Role};
use crate::nn::{Adam, AdamConfig};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PAE1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step_count: u64,
}

/// Everything in a checkpoint except the raw arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub code: ProductCodeParams,
    pub model: ModelConfig,
    pub epoch: usize,
    pub best_loss: Option<f64>,
    pub encoder_optimizer: OptimizerHeader,
    pub decoder_optimizer: OptimizerHeader,
    pub arrays: Vec<ArrayEntry>,
}

/// Model, both optimizer states, and training progress.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: ProductAe<T>,
    pub encoder_optimizer: Adam<T>,
    pub decoder_optimizer: Adam<T>,
    pub epoch: usize,
    pub best_loss: Option<f64>,
}

fn named_arrays<T: Real>(ckpt: &Checkpoint<T>) -> Vec<(String, &Tensor<T>)> {
    let names = ckpt.model.param_names();
    let mut out: Vec<(String, &Tensor<T>)> = names
        .iter()
        .cloned()
        .zip(ckpt.model.params().map(|p| p.value()))
        .collect();
    for (role, opt) in [
        (Role::Encoder, &ckpt.encoder_optimizer),
        (Role::Decoder, &ckpt.decoder_optimizer),
    ] {
        let group: Vec<&String> = names
            .iter()
            .filter(|n| n.starts_with("enc") == (role == Role::Encoder))
            .collect();
        for (name, m) in group.iter().zip(&opt.m) {
            out.push((format!("adam.{role}.m.{name}"), m));
        }
        for (name, v) in group.iter().zip(&opt.v) {
            out.push((format!("adam.{role}.v.{name}"), v));
        }
    }
    out
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = named_arrays(self);
        let mut data = Vec::new();
        let mut manifest = Vec::with_capacity(arrays.len());
        for (name, tensor) in &arrays {
            manifest.push(ArrayEntry {
                name: name.clone(),
                dtype: T::DTYPE.to_string(),
                shape: tensor.shape().to_vec(),
                offset: data.len(),
            });
            for &x in tensor.data() {
                x.write_le(&mut data);
            }
        }
        let header = CheckpointHeader {
            dtype: T::DTYPE.to_string(),
            code: self.model.config().code_params(),
            model: *self.model.config(),
            epoch: self.epoch,
            best_loss: self.best_loss,
            encoder_optimizer: OptimizerHeader {
                config: self.encoder_optimizer.config,
                step_count: self.encoder_optimizer.step_count,
            },
            decoder_optimizer: OptimizerHeader {
                config: self.decoder_optimizer.config,
                step_count: self.decoder_optimizer.step_count,
            },
            arrays: manifest,
        };
        let json =
            serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| CheckpointError::Header("header too large".into()))?;
        let mut out = Vec::with_capacity(10 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, data) = parse(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(CheckpointError::Dtype {
                name: "<checkpoint>".into(),
                found: header.dtype,
                expected: T::DTYPE.into(),
            }
            .into());
        }
        header
            .model
            .validate()
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.code != header.model.code_params() {
            return Err(CheckpointError::Header(
                "code parameters disagree with model geometry".into(),
            )
            .into());
        }
        let model = ProductAe::new(header.model, 0)?;
        let mut ckpt = Checkpoint {
            encoder_optimizer: Adam::new(header.encoder_optimizer.config, model.encoder.params())?,
            decoder_optimizer: Adam::new(header.decoder_optimizer.config, model.decoder.params())?,
            model,
            epoch: header.epoch,
            best_loss: header.best_loss,
        };
        ckpt.encoder_optimizer.step_count = header.encoder_optimizer.step_count;
        ckpt.decoder_optimizer.step_count = header.decoder_optimizer.step_count;

        let lookup = |name: &str, expected: &[usize]| -> Result<Tensor<T>> {
            let entry = header
                .arrays
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))?;
            if entry.dtype != T::DTYPE {
                return Err(CheckpointError::Dtype {
                    name: name.into(),
                    found: entry.dtype.clone(),
                    expected: T::DTYPE.into(),
                }
                .into());
            }
            if entry.shape != expected {
                return Err(CheckpointError::Shape {
                    name: name.into(),
                    found: entry.shape.clone(),
                    expected: expected.to_vec(),
                }
                .into());
            }
            let numel: usize = expected.iter().product();
            let end = entry.offset + numel * T::BYTES;
            if end > data.len() {
                return Err(CheckpointError::Truncated {
                    offset: entry.offset,
                    needed: numel * T::BYTES,
                    len: data.len(),
                }
                .into());
            }
            let values = data[entry.offset..end]
                .chunks_exact(T::BYTES)
                .map(T::read_le)
                .collect();
            Tensor::new(expected.to_vec(), values)
        };

        let names = ckpt.model.param_names();
        for (name, p) in names.iter().zip(ckpt.model.params_mut()) {
            *p.value_mut() = lookup(name, p.value().shape())?;
        }
        for (role, opt) in [
            (Role::Encoder, &mut ckpt.encoder_optimizer),
            (Role::Decoder, &mut ckpt.decoder_optimizer),
        ] {
            let group: Vec<&String> = names
                .iter()
                .filter(|n| n.starts_with("enc") == (role == Role::Encoder))
                .collect();
            for (name, m) in group.iter().zip(opt.m.iter_mut()) {
                *m = lookup(&format!("adam.{role}.m.{name}"), m.shape())?;
            }
            for (name, v) in group.iter().zip(opt.v.iter_mut()) {
                *v = lookup(&format!("adam.{role}.v.{name}"), v.shape())?;
            }
        }
        Ok(ckpt)
    }

    /// Write atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CheckpointError::Missing(path.to_path_buf()).into(),
        _ => Error::io(path, e),
    })
}

/// Header of the checkpoint at `path`, without building the model.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = read(path)?;
    parse(&bytes).map(|(h, _)| h)
}

fn take(bytes: &[u8], offset: usize, needed: usize) -> Result<&[u8], CheckpointError> {
    bytes
        .get(offset..offset + needed)
        .ok_or(CheckpointError::Truncated {
            offset,
            needed,
            len: bytes.len(),
        })
}

fn parse(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let magic = take(bytes, 0, 4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.to_vec(),
        }
        .into());
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        }
        .into());
    }
    let header_len = u32::from_le_bytes(take(bytes, 6, 4)?.try_into().expect("4 bytes")) as usize;
    let json = take(bytes, 10, header_len)?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let data = &bytes[10 + header_len..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(CheckpointError::Header(format!("unknown dtype {other}")).into()),
    };
    let needed = header
        .arrays
        .iter()
        .map(|a| a.offset + a.shape.iter().product::<usize>() * width)
        .max()
        .unwrap_or(0);
    if needed > data.len() {
        return Err(CheckpointError::Truncated {
            offset: 10 + header_len,
            needed,
            len: data.len(),
        }
        .into());
    }
    if needed < data.len() {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after arrays",
            data.len() - needed
        ))
        .into());
    }
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let cfg = ModelConfig {
            n1: 3,
            k1: 2,
            n2: 4,
            k2: 3,
            iterations: 2,
            features: 2,
            enc_hidden_layers: 1,
            enc_hidden_width: 5,
            dec_hidden_layers: 1,
            dec_hidden_width: 6,
            dec_last_hidden_layers: 2,
        };
        let model = ProductAe::new(cfg, 11).unwrap();
        let mut enc = Adam::new(AdamConfig::with_lr(1e-3), model.encoder.params()).unwrap();
        let dec = Adam::new(AdamConfig::with_lr(2e-4), model.decoder.params()).unwrap();
        enc.step_count = 3;
        enc.m[0].data_mut()[0] = 0.125;
        enc.v[1].data_mut()[0] = 1.0 / 3.0;
        Checkpoint {
            model,
            encoder_optimizer: enc,
            decoder_optimizer: dec,
            epoch: 7,
            best_loss: Some(0.1 + 0.2),
        }
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let ckpt = sample();
        let back = Checkpoint::<f64>::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        let bits = |c: &Checkpoint<f64>| {
            c.model
                .params()
                .flat_map(|p| {
                    p.value()
                        .data()
                        .iter()
                        .map(|x| x.to_bits())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&ckpt), bits(&back));
        assert_eq!(ckpt.encoder_optimizer, back.encoder_optimizer);
        assert_eq!(ckpt.decoder_optimizer, back.decoder_optimizer);
        assert_eq!(back.epoch, 7);
        assert_eq!(back.best_loss.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn header_starts_with_magic_and_version() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"PAE1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 5, 9, 40, bytes.len() - 1] {
            let err = Checkpoint::<f64>::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Checkpoint(CheckpointError::Truncated { .. })),
                "cut {cut}: {err}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bad),
            Err(Error::Checkpoint(CheckpointError::BadMagic { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bad),
            Err(Error::Checkpoint(CheckpointError::UnsupportedVersion {
                found: 9,
                ..
            }))
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes),
            Err(Error::Checkpoint(CheckpointError::Dtype { .. }))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut header: CheckpointHeader =
            serde_json::from_slice(&bytes[10..10 + header_len]).unwrap();
        header.arrays[0].shape = header.arrays[0].shape.iter().rev().copied().collect();
        let swapped = header.arrays[0].shape.clone();
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..6].to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[10 + header_len..]);
        match Checkpoint::<f64>::from_bytes(&out) {
            Err(Error::Checkpoint(CheckpointError::Shape { found, .. })) => {
                assert_eq!(found, swapped)
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
