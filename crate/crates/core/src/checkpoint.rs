//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "GAMCKPT\0"
//! version    u32
//! meta_len   u64, then meta_len bytes of JSON {"config": .., "vocab": [..]}
//! n_arrays   u32
//! per array: name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!            data f64 × prod(dims)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::model::{Model, ModelConfig};
use crate::tape::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"GAMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    vocab: Vec<String>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, t) in model.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GamError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| GamError::Checkpoint("length overflow".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(GamError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GamError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| GamError::Checkpoint(format!("metadata: {e}")))?;
    let n = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| GamError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| GamError::Checkpoint(format!("{name}: size overflow")))?;
        let bytes = r.take(numel.checked_mul(8).ok_or_else(|| GamError::Checkpoint("size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| GamError::Checkpoint(format!("{name}: {e}")))?;
        if store.id(&name).is_some() {
            return Err(GamError::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, t);
    }
    if r.pos != buf.len() {
        return Err(GamError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Model::from_parts(meta.config, Vocab::from_tokens(meta.vocab)?, store)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| GamError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path).map_err(|e| GamError::io(path, e))?)
}
