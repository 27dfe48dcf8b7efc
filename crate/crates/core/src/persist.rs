//! Bit-exact weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EGW1" | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 rank | rank × u32 dims
//! all tensor values as f32, in tensor order
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::network::{Architecture, ClassifierWeights, PARAM_NAMES};
use crate::tensor::{Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"EGW1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic {0:?}, expected \"EGW1\"")]
    BadMagic([u8; 4]),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl From<TensorError> for PersistError {
    fn from(e: TensorError) -> Self {
        PersistError::ShapeMismatch(e.to_string())
    }
}

/// Header bytes for the given weights.
pub fn header_len(weights: &ClassifierWeights) -> usize {
    8 + weights
        .named_params()
        .map(|(name, t)| 2 + name.len() + 1 + 4 * t.rank())
        .sum::<usize>()
}

pub fn encode_weights(weights: &ClassifierWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(weights) + 4 * weights.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(weights.params().len() as u32).to_le_bytes());
    for (name, t) in weights.named_params() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in weights.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(PersistError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Recovers the architecture from the stored shapes.
fn infer_architecture(shapes: &[Vec<usize>]) -> Result<Architecture, PersistError> {
    let bad = || PersistError::ShapeMismatch(format!("unexpected layer shapes {shapes:?}"));
    if shapes.len() != PARAM_NAMES.len() {
        return Err(bad());
    }
    let conv = |i: usize| -> Result<[usize; 4], PersistError> { shapes[i].as_slice().try_into().map_err(|_| bad()) };
    let [k, _, cin, c1] = conv(0)?;
    let c2 = conv(2)?[3];
    let c3 = conv(4)?[3];
    let dense2 = shapes[8].as_slice();
    let (hidden, classes) = match dense2 {
        [h, c] => (*h, *c),
        _ => return Err(bad()),
    };
    // Input extent follows from the flattened length: f = c3·((((s−2k+2)/2)−k+1)/2)².
    let flat = shapes[6].first().copied().ok_or_else(bad)?;
    let side = (1..=1024)
        .find(|&s| {
            let arch = Architecture {
                input: [s, s, cin],
                kernel: k,
                conv_channels: [c1, c2, c3],
                hidden,
                classes,
            };
            arch.flatten_len().map(|f| f == flat).unwrap_or(false)
        })
        .ok_or_else(bad)?;
    Ok(Architecture {
        input: [side, side, cin],
        kernel: k,
        conv_channels: [c1, c2, c3],
        hidden,
        classes,
    })
}

pub fn decode_weights(bytes: &[u8]) -> Result<ClassifierWeights, PersistError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(PersistError::BadMagic(magic));
    }
    let count = r.u32()? as usize;
    if count != PARAM_NAMES.len() {
        return Err(PersistError::ShapeMismatch(format!(
            "{count} tensors, expected {}",
            PARAM_NAMES.len()
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for expected in PARAM_NAMES {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| PersistError::BadName)?;
        if name != expected {
            return Err(PersistError::ShapeMismatch(format!("tensor '{name}', expected '{expected}'")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        shapes.push(dims);
    }
    let arch = infer_architecture(&shapes)?;
    if arch.param_shapes()? != shapes {
        return Err(PersistError::ShapeMismatch(format!("shapes {shapes:?} do not form a valid network")));
    }
    let mut params = Vec::with_capacity(count);
    for dims in shapes {
        let n: usize = dims.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(PersistError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(ClassifierWeights::from_params(arch, params)?)
}

pub fn save_weights(weights: &ClassifierWeights, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let path = path.as_ref();
    fs::write(path, encode_weights(weights)).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ClassifierWeights, PersistError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_weights(&bytes)
}
