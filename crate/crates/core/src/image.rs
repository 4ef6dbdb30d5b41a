//! Minimal Netpbm reader (P2/P3/P5/P6) producing network inputs in `[0, 1]`.

use std::path::Path;

use crate::error::{DsrError, Result};
use crate::feature_maps::FeatureMap;
use crate::scalar::Scalar;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DsrError::Format(format!("expected a number at byte {start}")))
    }
}

/// Decodes a PGM (one channel) or PPM (three channels) image.
pub fn decode_pnm<T: Scalar>(bytes: &[u8]) -> Result<FeatureMap<T>> {
    let (channels, binary) = match bytes.get(..2) {
        Some(b"P2") => (1, false),
        Some(b"P5") => (1, true),
        Some(b"P3") => (3, false),
        Some(b"P6") => (3, true),
        _ => return Err(DsrError::Format("not a P2/P3/P5/P6 image".into())),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number()?;
    let height = c.number()?;
    let maxval = c.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(DsrError::Format(format!(
            "bad header {width}x{height} maxval {maxval}"
        )));
    }
    let count = width * height * channels;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(count);
    if binary {
        c.pos += 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raw = bytes
            .get(c.pos..c.pos + need)
            .ok_or_else(|| DsrError::Format("image data truncated".into()))?;
        if wide {
            data.extend(
                raw.chunks_exact(2)
                    .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64),
            );
        } else {
            data.extend(raw.iter().map(|&v| v as f64));
        }
    } else {
        for _ in 0..count {
            data.push(c.number()? as f64);
        }
    }
    if data.iter().any(|&v| v > maxval as f64) {
        return Err(DsrError::Format(format!("sample exceeds maxval {maxval}")));
    }
    FeatureMap::new(
        width,
        height,
        channels,
        data.into_iter().map(|v| T::of(v * scale)).collect(),
    )
}

pub fn read_pnm<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DsrError::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_pnm(&bytes)?.with_source(stem))
}

/// Binary 8-bit encoding (P5 or P6) of a one- or three-channel map in `[0, 1]`.
pub fn encode_pnm<T: Scalar>(fm: &FeatureMap<T>) -> Result<Vec<u8>> {
    let magic = match fm.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(DsrError::Format(format!(
                "cannot write a {c}-channel image"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", fm.width(), fm.height()).into_bytes();
    out.extend(
        fm.data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}
