//! `.fmap` binary format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMAP"
//! 4       2     version (u16 LE, = 1)
//! 6       2     reserved (u16 LE, = 0)
//! 8       2     width (u16 LE)
//! 10      2     height (u16 LE)
//! 12      4     channels (u32 LE)
//! 16      ...   width*height*channels f32 LE, row-major, channel fastest
//! ```

use std::path::Path;

use super::FeatureMap;
use crate::error::{DsrError, Result};
use crate::scalar::Scalar;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// Serializes a map; values are stored as `f32`.
pub fn encode_fmap<T: Scalar>(fm: &FeatureMap<T>) -> Result<Vec<u8>> {
    let width = u16::try_from(fm.width())
        .map_err(|_| DsrError::Format(format!("width {} exceeds u16", fm.width())))?;
    let height = u16::try_from(fm.height())
        .map_err(|_| DsrError::Format(format!("height {} exceeds u16", fm.height())))?;
    let channels = u32::try_from(fm.channels())
        .map_err(|_| DsrError::Format(format!("channels {} exceeds u32", fm.channels())))?;

    let mut out = Vec::with_capacity(HEADER_LEN + fm.data().len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    for &v in fm.data() {
        out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fmap<T: Scalar>(bytes: &[u8]) -> Result<FeatureMap<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(DsrError::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FMAP_MAGIC {
        return Err(DsrError::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != FMAP_VERSION {
        return Err(DsrError::Format(format!(
            "unsupported fmap version {version}"
        )));
    }
    if u16_at(6) != 0 {
        return Err(DsrError::Format("reserved header field is not zero".into()));
    }
    let width = u16_at(8) as usize;
    let height = u16_at(10) as usize;
    let channels = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| DsrError::Format("dimension overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(DsrError::Format(format!(
            "payload is {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMap::new(width, height, channels, data).map_err(|e| DsrError::Format(e.to_string()))
}

pub fn write_fmap<T: Scalar>(path: impl AsRef<Path>, fm: &FeatureMap<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fmap(fm)?).map_err(|e| DsrError::io(path, e))
}

/// Reads a map; `source_id` is set to the file stem.
pub fn read_fmap<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DsrError::io(path, e))?;
    let fm = decode_fmap(&bytes)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(fm.with_source(stem))
}
