//! Network checkpoints.
//!
//! ```text
//! "FCNP" | version u16 (=1) | reserved u16 (=0) | input_channels u32 | layer_count u32
//! layer_count x { kind u8 (0 = conv, 1 = pool) | out_channels u32 (0 for pool) }
//! per conv, in order: weight tensor, bias tensor
//! tensor = ndim u32 | ndim x dim u32 | prod(dims) x f32
//! ```
//! All integers and floats are little-endian. Weights have shape
//! `[out, 3, 3, in]`, biases `[out]`.

use std::path::Path;

use super::fcn::{ConvParams, Fcn, FcnConfig, FcnParams, LayerSpec, KERNEL};
use crate::error::{DsrError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCNP";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DsrError::Format(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, dims: &[usize], data: &[T]) -> Result<()> {
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for &v in data {
        out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint<T: Scalar>(net: &Fcn<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    put_u32(&mut out, net.config.input_channels)?;
    put_u32(&mut out, net.config.layers.len())?;
    for l in &net.config.layers {
        match l {
            LayerSpec::Conv { out_channels } => {
                out.push(0);
                put_u32(&mut out, *out_channels)?;
            }
            LayerSpec::MaxPool => {
                out.push(1);
                put_u32(&mut out, 0)?;
            }
        }
    }
    for c in &net.params.convs {
        put_tensor(
            &mut out,
            &[c.out_channels, KERNEL, KERNEL, c.in_channels],
            &c.weight,
        )?;
        put_tensor(&mut out, &[c.out_channels], &c.bias)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                DsrError::Format(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn tensor<T: Scalar>(&mut self, expected: &[usize]) -> Result<Vec<T>> {
        let ndim = self.u32()?;
        if ndim != expected.len() {
            return Err(DsrError::Format(format!(
                "tensor rank {ndim}, expected {}",
                expected.len()
            )));
        }
        for &e in expected {
            let d = self.u32()?;
            if d != e {
                return Err(DsrError::Format(format!("tensor dim {d}, expected {e}")));
            }
        }
        let count: usize = expected.iter().product();
        let raw = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| DsrError::Format("tensor too large".into()))?,
        )?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DsrError::Format("non-finite parameter".into()));
        }
        Ok(data)
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Fcn<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(DsrError::Format("bad checkpoint magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(DsrError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    if r.u16()? != 0 {
        return Err(DsrError::Format("reserved header field is not zero".into()));
    }
    let input_channels = r.u32()?;
    let n_layers = r.u32()?;
    if n_layers > 4096 {
        return Err(DsrError::Format(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = r.u8()?;
        let out_channels = r.u32()?;
        layers.push(match kind {
            0 => LayerSpec::Conv { out_channels },
            1 => LayerSpec::MaxPool,
            k => return Err(DsrError::Format(format!("unknown layer kind {k}"))),
        });
    }
    let config =
        FcnConfig::new(input_channels, layers).map_err(|e| DsrError::Format(e.to_string()))?;
    let mut convs = Vec::new();
    for c in FcnParams::<T>::zeros(&config).convs {
        let weight = r.tensor(&[c.out_channels, KERNEL, KERNEL, c.in_channels])?;
        let bias = r.tensor(&[c.out_channels])?;
        convs.push(ConvParams {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            weight,
            bias,
        });
    }
    if r.pos != bytes.len() {
        return Err(DsrError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Fcn::new(config, FcnParams { convs })
}

pub fn write_checkpoint<T: Scalar>(path: impl AsRef<Path>, net: &Fcn<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(net)?).map_err(|e| DsrError::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Fcn<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DsrError::io(path, e))?;
    decode_checkpoint(&bytes)
}
