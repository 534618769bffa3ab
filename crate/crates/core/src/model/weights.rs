//! CRYD weight files.
//!
//! ```text
//! "CRYD" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank × u32 dims | f32 data
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CRYD";
pub const WEIGHTS_VERSION: u32 = 1;

/// Named tensors as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub version: u32,
    pub tensors: ParamSet<f32>,
}

impl ModelWeights {
    pub fn new(tensors: ParamSet<f32>) -> Self {
        ModelWeights {
            version: WEIGHTS_VERSION,
            tensors,
        }
    }

    /// Fails unless the name/shape table equals `layout` exactly.
    pub fn check_layout(&self, layout: &[(String, Vec<usize>)], what: &str) -> Result<()> {
        let table: Vec<(&str, &[usize])> =
            self.tensors.iter().map(|(n, t)| (n, t.shape())).collect();
        let matches = table.len() == layout.len()
            && table
                .iter()
                .zip(layout)
                .all(|((n, s), (ln, ls))| n == ln && *s == ls.as_slice());
        if !matches {
            let first = table
                .first()
                .map_or("<empty>".to_string(), |(n, s)| format!("{n} {s:?}"));
            return Err(Error::Format(format!(
                "shape-table mismatch: file holds {} tensors starting with {first}, {what} needs {}",
                table.len(),
                layout.len()
            )));
        }
        Ok(())
    }
}

pub fn encode_weights(w: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&w.version.to_le_bytes());
    out.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    for (name, t) in w.tensors.iter() {
        let nb = name.as_bytes();
        let nlen = u16::try_from(nb.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rank =
            u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank too large: {name}")))?;
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated weight file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4).ok() != Some(WEIGHTS_MAGIC.as_slice()) {
        return Err(Error::Format("missing CRYD magic".into()));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight format version {version}"
        )));
    }
    let count = c.u32()?;
    let mut tensors = ParamSet::new();
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = c.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors
            .insert(name.clone(), Tensor::new(&shape, data)?)
            .map_err(|_| Error::Format(format!("duplicate tensor name {name}")))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor table",
            bytes.len() - c.pos
        )));
    }
    Ok(ModelWeights { version, tensors })
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(w)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_weights(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
