//! Versioned binary checkpoints.
//!
//! Layout, little-endian: magic `GZCK`, `u32` version, `u32` length plus
//! the JSON model config, `u32` tensor count, then per tensor a `u32`
//! name length, the UTF-8 name, a `u32` rank, `u32` dims and `f32` values.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GZCK";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let cfg = serde_json::to_vec(model.config()).map_err(|e| Error::Config(e.to_string()))?;
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    let params = model.params();
    put_u32(&mut out, params.len() as u32);
    for id in params.ids() {
        let name = params.name(id).as_bytes();
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name);
        let t = params.get(id);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CheckpointMismatch("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

/// Read a checkpoint into a freshly built model.
///
/// If `expected` is given, the stored config must equal it. Every stored
/// tensor must match the name and shape of the rebuilt model's parameter.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Model> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointMismatch(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::CheckpointMismatch(format!("config: {e}")))?;
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::CheckpointMismatch(
                "stored model config differs from the requested one".into(),
            ));
        }
    }
    let mut stored = ParamStore::new();
    let count = r.u32()?;
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::CheckpointMismatch("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::CheckpointMismatch("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        if stored.lookup(&name).is_some() {
            return Err(Error::CheckpointMismatch(format!("duplicate tensor {name}")));
        }
        stored.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::CheckpointMismatch("trailing bytes after the last tensor".into()));
    }
    let mut model = Model::new(config, 0)?;
    model.params_mut().copy_from(&stored)?;
    Ok(model)
}
