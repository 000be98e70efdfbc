//! "CSFT" flat binary feature dumps: magic, u32 version, u32 T, u32 D, then
//! `T·D` little-endian f32 values, row-major.

use std::io::{Read, Write};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CSFT_MAGIC: &[u8; 4] = b"CSFT";
pub const CSFT_VERSION: u32 = 1;

pub fn write_features<S: Scalar>(mut w: impl Write, x: &FeatureSequence<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * x.frames().len());
    buf.extend_from_slice(CSFT_MAGIC);
    buf.extend_from_slice(&CSFT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(x.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.dim() as u32).to_le_bytes());
    for &v in x.frames().data() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_features<S: Scalar>(mut r: impl Read) -> Result<FeatureSequence<S>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != CSFT_MAGIC {
        return Err(Error::MalformedFeatures("missing CSFT header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != CSFT_VERSION {
        return Err(Error::MalformedFeatures(format!(
            "unsupported version {version}"
        )));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != t * d * 4 {
        return Err(Error::MalformedFeatures(format!(
            "expected {} payload bytes for {t}×{d}, found {}",
            t * d * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| S::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    FeatureSequence::new(Tensor::new(vec![t, d], data)?)
}
