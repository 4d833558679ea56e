//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `M3DCKPT\0`, `u32` version, length-prefixed
//! config hash (hex) and config text, `u64` step, `u32` parameter count, then
//! per parameter a length-prefixed name, `u32` rank, `u32` dims and `f64` data.
//! Strings are prefixed with their `u32` byte length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

use super::config::DetectorConfig;
use super::model::DetectorState;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"M3DCKPT\x00";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Scalar>(state: &DetectorState<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut buf, &state.config.hash());
    put_str(&mut buf, &state.config.to_text());
    buf.extend_from_slice(&state.step.to_le_bytes());
    buf.extend_from_slice(&(state.params.len() as u32).to_le_bytes());
    for id in state.params.ids() {
        put_str(&mut buf, state.params.name(id));
        let shape = state.params.shape(id);
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in state.params.value(id) {
            buf.extend_from_slice(&v.to_f64c().to_le_bytes());
        }
    }
    buf
}

pub fn write_checkpoint<T: Scalar>(state: &DetectorState<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(self.path, "truncated checkpoint"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::parse(path, "invalid UTF-8 in checkpoint"))
    }
}

/// Reads a checkpoint. With `expected`, the stored config hash must match it.
pub fn read_checkpoint<T: Scalar>(path: &Path, expected: Option<&DetectorConfig>) -> Result<DetectorState<T>> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        data: &data,
        pos: 0,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
    }
    let hash = r.string()?;
    let text = r.string()?;
    let config = DetectorConfig::from_text(&text)?;
    if config.hash() != hash {
        return Err(Error::Config(format!("{}: stored config does not match its hash", path.display())));
    }
    if let Some(want) = expected {
        if want.hash() != hash {
            return Err(Error::Config(format!(
                "{}: checkpoint config hash {hash} differs from expected {}",
                path.display(),
                want.hash()
            )));
        }
    }
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let mut loaded = ParamSet::<T>::new();
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| T::c(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        loaded.add(name, &shape, values);
    }
    if r.pos != data.len() {
        return Err(Error::parse(path, "trailing bytes after checkpoint"));
    }
    let mut state = DetectorState::new(config, 0)?;
    state.params.load_from(&loaded)?;
    state.step = step;
    Ok(state)
}
