//! Binary model files: a small header followed by little-endian `f32`
//! parameters in layout order.

use std::path::Path;

use super::tinylm::{ModelConfig, TinyLm};
use super::vocab::{Vocab, RESERVED};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IA1M";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &TinyLm<f32>, vocab: &Vocab) -> Result<Vec<u8>> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Invalid(format!(
            "vocabulary has {} symbols but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let c = &model.config;
    let mut out = Vec::with_capacity(48 + 4 * vocab.symbols().len() + 4 * model.params.len());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        c.vocab_size as u32,
        c.d_model as u32,
        c.n_layers as u32,
        c.n_heads as u32,
        c.context as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(vocab.symbols().len() as u32).to_le_bytes());
    for &ch in vocab.symbols() {
        out.extend_from_slice(&(ch as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(TinyLm<f32>, Vocab)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..5).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        context: dims[4],
    };
    config.validate().map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let n_symbols = cur.u32()? as usize;
    if n_symbols + RESERVED.len() != config.vocab_size {
        return Err(Error::BadCheckpoint(format!(
            "{n_symbols} symbols do not match vocabulary size {}",
            config.vocab_size
        )));
    }
    let mut symbols = Vec::with_capacity(n_symbols);
    for _ in 0..n_symbols {
        let cp = cur.u32()?;
        let ch = char::from_u32(cp).ok_or_else(|| Error::BadCheckpoint(format!("invalid code point {cp}")))?;
        if symbols.last().is_some_and(|&prev| prev >= ch) {
            return Err(Error::BadCheckpoint("vocabulary is not sorted".into()));
        }
        symbols.push(ch);
    }
    let count = cur.u64()? as usize;
    let raw = cur.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::BadCheckpoint("parameter count overflow".into()))?,
    )?;
    if cur.pos != bytes.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let params = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let model = TinyLm::from_params(config, params).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    Ok((model, Vocab::from_chars(symbols)))
}

pub fn write_checkpoint(path: &Path, model: &TinyLm<f32>, vocab: &Vocab) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(TinyLm<f32>, Vocab)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
