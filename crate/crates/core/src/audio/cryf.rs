//! CRYF feature files: `"CRYF"`, u32 LE frame count, u32 LE dimension, then
//! frames×dim f32 LE values, row-major.

use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const CRYF_MAGIC: &[u8; 4] = b"CRYF";

pub fn encode_cryf(features: &Tensor<f32>) -> Result<Vec<u8>> {
    if features.rank() != 2 {
        return Err(Error::Dimension(format!(
            "feature matrix must be 2-D, got {:?}",
            features.shape()
        )));
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let mut out = Vec::with_capacity(12 + 4 * features.len());
    out.extend_from_slice(CRYF_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cryf(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 12 || &bytes[..4] != CRYF_MAGIC {
        return Err(Error::Format("missing CRYF magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format("CRYF header overflows".into()))?;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "CRYF body has {} bytes, header promises {expected}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&[n, d], data)
}

pub fn write_cryf(path: &Path, features: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_cryf(features)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_cryf(path: &Path) -> Result<Tensor<f32>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_cryf(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
