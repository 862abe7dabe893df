//! Versioned binary checkpoint.
//!
//! Layout (little endian): magic `EBMCKPT\n`, `u32` version, `u32`-length
//! JSON metadata, `u32` entry count, then per entry: `u32`-length name,
//! `u8` dtype (1 = f64), `u32` rank, `u64` dims, row-major payload. Raw and
//! EMA parameters are stored side by side under `raw/` and `ema/` prefixes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EnergyModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"EBMCKPT\n";
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub raw: EnergyModel,
    pub ema: EnergyModel,
    /// Resolved run configuration the model was trained with.
    pub run_config: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    run_config: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.raw.params.same_layout(&self.ema.params) || self.raw.config != self.ema.config {
            return Err(Error::Shape("raw and EMA models differ in shape".into()));
        }
        let meta = serde_json::to_vec(&Meta {
            model: self.raw.config.clone(),
            run_config: self.run_config.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let n = 2 * self.raw.params.entries.len();
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for (prefix, model) in [("raw/", &self.raw), ("ema/", &self.ema)] {
            for e in &model.params.entries {
                let name = format!("{prefix}{}", e.name);
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.push(DTYPE_F64);
                out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
                for &d in &e.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in &model.params.flat[e.offset..e.offset + e.len()] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version mismatch: file has {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut raw = EnergyModel::new(meta.model.clone())?;
        let mut ema = raw.clone();
        let n = r.u32()? as usize;
        if n != 2 * raw.params.entries.len() {
            return Err(Error::Checkpoint(format!(
                "{n} entries, expected {}",
                2 * raw.params.entries.len()
            )));
        }
        let mut seen = 0usize;
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?
                .to_string();
            if r.take(1)?[0] != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("{name}: unsupported dtype")));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let (target, pname) = if let Some(p) = name.strip_prefix("raw/") {
                (&mut raw, p)
            } else if let Some(p) = name.strip_prefix("ema/") {
                (&mut ema, p)
            } else {
                return Err(Error::Checkpoint(format!("unexpected entry `{name}`")));
            };
            let entry = target
                .params
                .entry(pname)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?
                .clone();
            if entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {shape:?}, expected {:?}",
                    entry.shape
                )));
            }
            let dst = &mut target.params.flat[entry.offset..entry.offset + entry.len()];
            for v in dst.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
            seen += 1;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        debug_assert_eq!(seen, n);
        Ok(Checkpoint {
            raw,
            ema,
            run_config: meta.run_config,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ck.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}
