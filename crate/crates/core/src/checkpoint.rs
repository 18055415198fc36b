//! Versioned checkpoint container shared by models and detectors.
//!
//! Layout (little-endian):
//!
//! ```text
//! [0..8)   magic  b"RESDCKPT"
//! [8..12)  format version (u32)
//! [12..14) tag length n (u16)
//! [14..14+n) tag, UTF-8 (e.g. "model:classifier-4", "detector:residue")
//! next 8   payload length m (u64)
//! next m   payload, JSON
//! ```
//!
//! JSON floats are written in shortest round-trip form, so loading restores
//! every parameter bit for bit.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RESDCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Serialize>(tag: &str, value: &T) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(value)?;
    let tag_len = u16::try_from(tag.len())
        .map_err(|_| Error::Checkpoint("tag longer than 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(22 + tag.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a container into its tag and decoded payload.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<(String, T)> {
    let mut cur = bytes;
    let magic = take(&mut cur, 8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let tag_len = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap()) as usize;
    let tag = std::str::from_utf8(take(&mut cur, tag_len)?)
        .map_err(|_| Error::Checkpoint("tag is not UTF-8".into()))?
        .to_string();
    let len = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
    let payload = take(&mut cur, len)?;
    if !cur.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((tag, serde_json::from_slice(payload)?))
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Checkpoint("truncated container".into()));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

pub fn save<T: Serialize>(path: &Path, tag: &str, value: &T) -> Result<()> {
    let bytes = encode(tag, value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a container and checks that its tag starts with `tag_prefix`.
pub fn load<T: DeserializeOwned>(path: &Path, tag_prefix: &str) -> Result<(String, T)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tag, value) = decode(&bytes)?;
    if !tag.starts_with(tag_prefix) {
        return Err(Error::Checkpoint(format!(
            "expected a `{tag_prefix}` checkpoint, found `{tag}`"
        )));
    }
    Ok((tag, value))
}
