//! Checksummed binary container shared by model and optimizer-state files.
//!
//! ```text
//! magic      4 bytes
//! version    u32 LE
//! header_len u64 LE
//! header     header_len bytes of UTF-8 JSON
//! tensors    raw f32 LE, in the order the header declares
//! crc32      u32 LE over header + tensors
//! ```

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

pub fn encode(magic: &[u8; 4], header: &str, tensors: &[&[f32]]) -> Vec<u8> {
    let n: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + 4 * n + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in tensors {
        for v in *t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[PREAMBLE..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parsed container: the header and the raw tensor section.
pub struct Decoded<'a> {
    pub header: &'a str,
    tensor_bytes: &'a [u8],
}

impl<'a> Decoded<'a> {
    pub fn floats(&self) -> Vec<f32> {
        self.tensor_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    }
}

/// Validates preamble, length and checksum. `tensor_len` maps the parsed
/// header to the number of f32 values it declares.
pub fn decode<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    kind: &'static str,
    tensor_len: impl FnOnce(&str) -> Result<usize>,
) -> Result<Decoded<'a>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic { expected: kind });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated("incomplete preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(PREAMBLE))
        .filter(|&end| end + 4 <= bytes.len())
        .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes exceeds file")))?;

    let stored_crc = |b: &[u8]| u32::from_le_bytes(b[b.len() - 4..].try_into().expect("4 bytes"));
    let crc_over_rest = || {
        let computed = crc32fast::hash(&bytes[PREAMBLE..bytes.len() - 4]);
        (stored_crc(bytes), computed)
    };

    let header = match std::str::from_utf8(&bytes[PREAMBLE..header_end]) {
        Ok(h) => h,
        Err(_) => {
            let (stored, computed) = crc_over_rest();
            return Err(if stored != computed {
                Error::Checksum { stored, computed }
            } else {
                Error::Header("header is not UTF-8".into())
            });
        }
    };
    let n = match tensor_len(header) {
        Ok(n) => n,
        Err(e) => {
            let (stored, computed) = crc_over_rest();
            return Err(if stored != computed {
                Error::Checksum { stored, computed }
            } else {
                e
            });
        }
    };
    let expected = header_end + 4 * n + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!(
            "expected {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let (stored, computed) = crc_over_rest();
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Decoded {
        header,
        tensor_bytes: &bytes[header_end..expected - 4],
    })
}
