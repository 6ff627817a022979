//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "VDRV" | u32 version | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 rank | u64 dims[rank] | f32 data
//! u32 text length | text (JSON: vocab, normalization, model config)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::Tensor;
use crate::tokenizer::{Normalization, SymbolVocab};

pub const MAGIC: &[u8; 4] = b"VDRV";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    vocab: Vec<String>,
    normalization: Normalization,
    config: ModelConfig,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let params = model.store.params();
    out.extend((params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Internal(format!("name too long: {}", p.name)))?;
        out.extend(len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend((v as f32).to_le_bytes());
        }
    }
    let trailer = Trailer {
        vocab: model.vocab.names().to_vec(),
        normalization: model.norm,
        config: model.config.clone(),
    };
    let text = serde_json::to_string(&trailer).map_err(|e| Error::Internal(e.to_string()))?;
    out.extend((text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.error(0, "bad magic bytes, not a checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.error(at, "name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| r.error(at, "tensor too large"))?;
        let raw = r.take(bytes, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push((at, name, Tensor::new(shape, data)?));
    }
    let at = r.pos;
    let len = r.u32("text length")? as usize;
    let text = std::str::from_utf8(r.take(len, "text block")?)
        .map_err(|_| r.error(at, "text block is not UTF-8"))?;
    if r.pos != buf.len() {
        return Err(r.error(r.pos, "trailing bytes after text block"));
    }
    let trailer: Trailer =
        serde_json::from_str(text).map_err(|e| r.error(at, format!("bad text block: {e}")))?;
    let vocab = SymbolVocab::from_names(trailer.vocab)?;
    let mut model = Model::new(trailer.config, vocab)?;
    model.norm = trailer.normalization;
    if tensors.len() != model.store.len() {
        return Err(r.error(
            8,
            format!(
                "{} tensors stored, model expects {}",
                tensors.len(),
                model.store.len()
            ),
        ));
    }
    for (at, name, t) in tensors {
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| r.error(at, format!("unknown tensor `{name}`")))?;
        model
            .store
            .set_value(id, t)
            .map_err(|e| r.error(at, e.to_string()))?;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
