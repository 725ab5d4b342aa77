//! NBEMB: little-endian container for precomputed embedding records.
//!
//! ```text
//! "NBEM" | version u32 = 1 | count u32 | d_i u32 | d_t u32
//! count × { label u8 | noisy u8 | d_i × f32 | d_t × f32 }
//! ```

use std::fs;
use std::path::Path;

use crate::encoders::EmbeddingRecord;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBEM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Expected `(d_i, d_t)` and class count a reader validates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub image: usize,
    pub text: usize,
    pub classes: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        Self {
            image: 512,
            text: 768,
            classes: 3,
        }
    }
}

pub fn encode(records: &[EmbeddingRecord], d_i: usize, d_t: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (2 + 4 * (d_i + d_t)));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, as_u32(records.len())?, as_u32(d_i)?, as_u32(d_t)?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, r) in records.iter().enumerate() {
        if r.image.len() != d_i || r.text.len() != d_t {
            return Err(Error::dim(format!(
                "record {i} has dims ({}, {}), header says ({d_i}, {d_t})",
                r.image.len(),
                r.text.len()
            )));
        }
        let label = u8::try_from(r.label)
            .map_err(|_| Error::Format(format!("record {i}: label {} does not fit in u8", r.label)))?;
        out.push(label);
        out.push(u8::from(r.noisy));
        for v in r.image.iter().chain(&r.text) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn as_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8], dims: Option<EmbeddingDims>) -> Result<Vec<EmbeddingRecord>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"NBEM\"",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = read_u32(bytes, 8) as usize;
    let d_i = read_u32(bytes, 12) as usize;
    let d_t = read_u32(bytes, 16) as usize;
    if let Some(want) = dims {
        if (d_i, d_t) != (want.image, want.text) {
            return Err(Error::ConfigMismatch(format!(
                "file has (d_i, d_t) = ({d_i}, {d_t}), configuration expects ({}, {})",
                want.image, want.text
            )));
        }
    }
    let rec_len = 2 + 4 * (d_i + d_t);
    let expected = HEADER_LEN + count * rec_len;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - expected
        )));
    }
    let classes = dims.map_or(usize::MAX, |d| d.classes);
    let floats = |chunk: &[u8]| -> Vec<f32> {
        chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    };
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let r = &bytes[HEADER_LEN + i * rec_len..HEADER_LEN + (i + 1) * rec_len];
        let label = r[0] as usize;
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let noisy = match r[1] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("record {i}: noisy flag byte {b}"))),
        };
        records.push(EmbeddingRecord {
            label,
            image: floats(&r[2..2 + 4 * d_i]),
            text: floats(&r[2 + 4 * d_i..]),
            noisy,
        });
    }
    Ok(records)
}

pub fn save_embeddings(path: &Path, records: &[EmbeddingRecord], d_i: usize, d_t: usize) -> Result<()> {
    let bytes = encode(records, d_i, d_t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an NBEMB file, validating its dimensions against `dims` when given.
pub fn load_embeddings(path: &Path, dims: Option<EmbeddingDims>) -> Result<Vec<EmbeddingRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, dims)
}
