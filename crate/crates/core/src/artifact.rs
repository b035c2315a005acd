//! Binary container shared by measurement series and model files:
//!
//! ```text
//! magic (8 bytes) | header length (u64 LE) | JSON header | f64 LE payload
//! ```
//!
//! The payload length is recorded in the header by the caller; readers check
//! it against the bytes actually present.

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file is truncated: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("shape mismatch for tensor `{name}`: {detail}")]
    Shape { name: String, detail: String },
    #[error("lineage mismatch: {0}")]
    Lineage(String),
}

pub fn write_container<H: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    header: &H,
    payload: &[f64],
) -> Result<(), ArtifactError> {
    let json = serde_json::to_vec(header).map_err(|e| ArtifactError::Header(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a container, returning the raw JSON header and the payload.
pub fn read_container(
    path: &Path,
    magic: &[u8; 8],
    kind: &'static str,
) -> Result<(serde_json::Value, Vec<f64>), ArtifactError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_container(&bytes, magic, kind)
}

pub fn decode_container(
    bytes: &[u8],
    magic: &[u8; 8],
    kind: &'static str,
) -> Result<(serde_json::Value, Vec<f64>), ArtifactError> {
    if bytes.len() < 16 {
        return Err(ArtifactError::Truncated(format!("{} bytes, no header", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(ArtifactError::BadMagic { expected: kind });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).ok_or_else(|| ArtifactError::Header("header length overflow".into()))?;
    if bytes.len() < end {
        return Err(ArtifactError::Truncated(format!("header needs {len} bytes")));
    }
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| ArtifactError::Header(e.to_string()))?;
    let version = header
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ArtifactError::Header("missing format_version".into()))? as u32;
    if version != FORMAT_VERSION {
        return Err(ArtifactError::Version { found: version, expected: FORMAT_VERSION });
    }
    let rest = &bytes[end..];
    if rest.len() % 8 != 0 {
        return Err(ArtifactError::Truncated(format!("payload of {} bytes is not a whole number of f64", rest.len())));
    }
    let payload = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, payload))
}

pub fn parse_header<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, ArtifactError> {
    serde_json::from_value(value).map_err(|e| ArtifactError::Header(e.to_string()))
}

/// Short hex digest of the JSON serialisation of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// Hex digest of arbitrary bytes, used for file fingerprints.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}
