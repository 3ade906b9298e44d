//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SHADCKPT"
//! 8       4     u32 format version (1)
//! 12      20    u32 V, d, L, H, C
//! 32      4*P   f32 parameters in the order documented on `Layout`
//! ```
//!
//! Parameters are stored as 32-bit floats regardless of the training width.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{Arch, Layout, ModelParams, Scalar};
use super::{LmError, Result};

const MAGIC: &[u8; 8] = b"SHADCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn write_checkpoint<F: Scalar>(params: &ModelParams<F>) -> Vec<u8> {
    let a = params.arch;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [a.vocab_size, a.d_model, a.n_layers, a.n_heads, a.context] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &x in &params.data {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    out
}

fn parse_error(offset: usize, message: impl Into<String>) -> LmError {
    LmError::Checkpoint {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            parse_error(
                bytes.len(),
                format!("truncated header, need {} bytes", offset + 4),
            )
        })
}

/// Parses checkpoint bytes; with `expected`, rejects any other architecture.
pub fn read_checkpoint(bytes: &[u8], expected: Option<&Arch>) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() {
        return Err(parse_error(bytes.len(), "truncated magic"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(parse_error(0, "bad magic, not a checkpoint"));
    }
    let version = read_u32(bytes, 8)?;
    if version != VERSION {
        return Err(parse_error(8, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = read_u32(bytes, 12 + 4 * i)? as usize;
    }
    let found = Arch {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        context: dims[4],
    };
    if let Some(expected) = expected {
        if *expected != found {
            return Err(LmError::Fingerprint {
                expected: *expected,
                found,
            });
        }
    }
    found
        .validate()
        .map_err(|e| parse_error(12, e.to_string()))?;
    let n = Layout::new(&found).total;
    let need = HEADER_LEN + 4 * n;
    if bytes.len() < need {
        return Err(parse_error(
            bytes.len(),
            format!("truncated parameters, expected {need} bytes for {found}"),
        ));
    }
    if bytes.len() > need {
        return Err(parse_error(
            need,
            format!("{} trailing bytes", bytes.len() - need),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(ModelParams { arch: found, data })
}

pub fn save_checkpoint<F: Scalar>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&Arch>) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?, expected)
}

/// Lowercase hex SHA-256 of the checkpoint bytes.
pub fn checkpoint_hash<F: Scalar>(params: &ModelParams<F>) -> String {
    Sha256::digest(write_checkpoint(params))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
