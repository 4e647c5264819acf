//! Binary `ONOC` checkpoints.
//!
//! Little-endian: magic | u32 version | u32 header length | JSON header
//! (model config, normalizer, run metadata) | u32 parameter count, then per
//! parameter u32 name length, name, u32 rows, u32 cols, f64 values | u32
//! buffer count, then per buffer u8 initialized, f64 momentum, u32 k, k² f64
//! covariance, k² f64 Cholesky factor | u64 optimizer step, then the first and
//! second moments of every parameter | u32 CRC32 of everything before it.

use super::{AdamW, TrainConfig};
use crate::attention::CovarianceBuffer;
use crate::autodiff::Tensor;
use crate::binio::{put_f64s, put_u32, to_u32, Reader};
use crate::data::GridMeta;
use crate::linalg::DenseMatrix;
use crate::model::{ModelConfig, Normalizer, OnoModel};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ONOC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training progress recorded alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    /// Grid the model was trained on, when the data had one.
    pub train_grid: Option<GridMeta>,
    pub train: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    normalizer: Normalizer,
    meta: CheckpointMeta,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: OnoModel,
    pub optimizer: AdamW,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.model, &self.optimizer, &self.meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        decode(bytes)
    }
}

fn encode(model: &OnoModel, optimizer: &AdamW, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        normalizer: model.normalizer.clone(),
        meta: meta.clone(),
    })?;
    put_u32(&mut out, to_u32(header.len(), "header length")?);
    out.extend_from_slice(&header);

    put_u32(&mut out, to_u32(model.params.len(), "parameter count")?);
    for p in model.params.iter() {
        let (r, c) = p.value.dims2()?;
        put_u32(&mut out, to_u32(p.name.len(), "name length")?);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, to_u32(r, "rows")?);
        put_u32(&mut out, to_u32(c, "cols")?);
        put_f64s(&mut out, p.value.data());
    }

    put_u32(&mut out, to_u32(model.stages.len(), "buffer count")?);
    for stage in &model.stages {
        let b = &stage.ortho.buffer;
        out.push(b.is_initialized() as u8);
        put_f64s(&mut out, &[b.momentum()]);
        put_u32(&mut out, to_u32(b.k(), "k")?);
        put_f64s(&mut out, b.covariance().data());
        put_f64s(&mut out, b.chol().data());
    }

    if optimizer.m.len() != model.params.len() {
        return Err(Error::ShapeMismatch("optimizer state does not match the parameters".into()));
    }
    out.extend_from_slice(&optimizer.step.to_le_bytes());
    for (m, v) in optimizer.m.iter().zip(&optimizer.v) {
        put_f64s(&mut out, m.data());
        put_f64s(&mut out, v.data());
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile("no room for header length and checksum".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(8, "preamble")?;

    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)?;
    let mut model = OnoModel::new(header.model)?;
    if header.normalizer.input_mean.len() != model.config.in_channels
        || header.normalizer.input_std.len() != model.config.in_channels
        || header.normalizer.output_mean.len() != model.config.out_channels
        || header.normalizer.output_std.len() != model.config.out_channels
    {
        return Err(Error::Malformed("normalizer channel counts do not match the model".into()));
    }
    model.normalizer = header.normalizer;

    let count = r.u32("parameter count")? as usize;
    if count != model.params.len() {
        return Err(Error::Malformed(format!(
            "{count} stored parameters, architecture has {}",
            model.params.len()
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for p in model.params.iter_mut() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Malformed(format!("expected parameter {}, found {name}", p.name)));
        }
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if (rows, cols) != p.value.dims2()? {
            return Err(Error::Malformed(format!(
                "parameter {name} stored as {rows}x{cols}, expected {:?}",
                p.value.shape()
            )));
        }
        p.value = Tensor::matrix(rows, cols, r.f64s(rows * cols, name)?);
        shapes.push((rows, cols));
    }

    let buffers = r.u32("buffer count")? as usize;
    if buffers != model.stages.len() {
        return Err(Error::Malformed(format!(
            "{buffers} stored buffers, model has {} stages",
            model.stages.len()
        )));
    }
    for stage in model.stages.iter_mut() {
        let initialized = match r.u8("initialized flag")? {
            0 => false,
            1 => true,
            b => return Err(Error::Malformed(format!("initialized flag {b}"))),
        };
        let momentum = r.f64("momentum")?;
        let k = r.u32("k")? as usize;
        if k != stage.ortho.k() {
            return Err(Error::Malformed(format!("buffer with k = {k}, stage has {}", stage.ortho.k())));
        }
        let cov = DenseMatrix::from_vec(k, k, r.f64s(k * k, "covariance")?)?;
        let chol = DenseMatrix::from_vec(k, k, r.f64s(k * k, "cholesky factor")?)?;
        stage.ortho.buffer = CovarianceBuffer::restore(cov, chol, momentum, initialized)?;
    }

    let step = r.u64("optimizer step")?;
    let mut m = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for &(rows, cols) in &shapes {
        m.push(Tensor::matrix(rows, cols, r.f64s(rows * cols, "first moment")?));
        v.push(Tensor::matrix(rows, cols, r.f64s(rows * cols, "second moment")?));
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} unread bytes before the checksum", r.remaining())));
    }
    let optimizer = AdamW {
        config: header.meta.train.adam(),
        m,
        v,
        step,
    };
    Ok(Checkpoint {
        model,
        optimizer,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, model: &OnoModel, optimizer: &AdamW, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode(model, optimizer, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
