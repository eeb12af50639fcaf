//! Shared binary layout of snapshot and checkpoint files:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic tag                                 |
//! | 8     | header length `L`, u64 little-endian      |
//! | `L`   | UTF-8 JSON header                         |
//! | rest  | payload, f64 little-endian, no padding    |

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Serialize the header to its canonical byte form.
pub(crate) fn header_bytes(header: &impl Serialize) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(header)?)
}

pub(crate) fn write_prefix(w: &mut impl Write, magic: &[u8; 8], header: &[u8]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header)?;
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read the magic and header; returns the header and the payload offset in bytes.
pub(crate) fn read_prefix<H: DeserializeOwned>(
    r: &mut impl Read,
    magic: &[u8; 8],
) -> Result<(H, u64)> {
    let mut tag = [0u8; 8];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Format("file too short for a header".into()))?;
    if &tag != magic {
        return Err(Error::Format(format!(
            "unexpected file tag {:?}, expected {:?}",
            String::from_utf8_lossy(&tag),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated header length".into()))?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 32 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header =
        serde_json::from_slice(&text).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    Ok((header, 16 + len))
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("payload shorter than {count} values")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Fail unless the reader is exhausted.
pub(crate) fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after the payload".into())),
    }
}
