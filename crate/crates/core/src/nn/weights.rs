//! Binary weights container.
//!
//! Layout (little endian): magic `MNWT`, `u32` version, `u64` payload length,
//! 32-byte SHA-256 of the payload, payload. The payload is a `u32` layer
//! count followed by, per layer, `u32` inputs, `u32` outputs, `u8` activation
//! tag, row-major weights and then biases as `f64`.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Activation, Dense, Mlp, NnError};

const MAGIC: &[u8; 4] = b"MNWT";
pub const WEIGHTS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 32;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights version {0}")]
    Version(u32),
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated weights payload")]
    Truncated,
    #[error("unknown activation tag {0}")]
    UnknownActivation(u8),
    #[error(transparent)]
    Network(#[from] NnError),
}

fn payload(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + net.param_count() * 8 + net.layers().len() * 9);
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        out.push(l.activation().tag());
        for v in l.weights().iter().chain(l.bias()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_weights<W: Write>(net: &Mlp, mut writer: W) -> Result<(), WeightsError> {
    let body = payload(net);
    writer.write_all(MAGIC)?;
    writer.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    writer.write_all(&(body.len() as u64).to_le_bytes())?;
    writer.write_all(Sha256::digest(&body).as_slice())?;
    writer.write_all(&body)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() < n {
            return Err(WeightsError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, WeightsError> {
        let raw = self.take(n.checked_mul(8).ok_or(WeightsError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_weights<R: Read>(mut reader: R) -> Result<Mlp, WeightsError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => WeightsError::Truncated,
        _ => WeightsError::Io(e),
    })?;
    if &header[..4] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::Version(version));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    reader.take(len).read_to_end(&mut body)?;
    if body.len() as u64 != len {
        return Err(WeightsError::Truncated);
    }
    if Sha256::digest(&body).as_slice() != &header[16..48] {
        return Err(WeightsError::Checksum);
    }
    let mut cur = Cursor { bytes: &body };
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let inputs = cur.u32()? as usize;
        let outputs = cur.u32()? as usize;
        let tag = cur.take(1)?[0];
        let activation = Activation::from_tag(tag).ok_or(WeightsError::UnknownActivation(tag))?;
        let weights = cur.f64s(inputs * outputs)?;
        let bias = cur.f64s(outputs)?;
        layers.push(Dense::from_parts(inputs, outputs, weights, bias, activation)?);
    }
    if !cur.bytes.is_empty() {
        return Err(WeightsError::Truncated);
    }
    Ok(Mlp::from_layers(layers)?)
}
