//! Shared container layout for model and dataset files: one line of UTF-8
//! JSON (the manifest) terminated by `\n`, followed by a little-endian
//! `f32` blob.

use crate::error::{Error, Result};

pub(crate) fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing manifest line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("manifest is not valid UTF-8".into()))?;
    Ok((header, &bytes[nl + 1..]))
}

/// Decodes exactly `count` floats; a short blob is a truncation error and a
/// long one a consistency error.
pub(crate) fn decode_f32(blob: &[u8], count: usize) -> Result<Vec<f64>> {
    let expected = count * 4;
    if blob.len() < expected {
        return Err(Error::Truncated { expected, found: blob.len() });
    }
    if blob.len() > expected {
        return Err(Error::Consistency(format!(
            "blob holds {} bytes but the manifest accounts for {expected}",
            blob.len()
        )));
    }
    Ok(blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub(crate) fn encode_f32(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn check_version(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Version { expected, found });
    }
    Ok(())
}
