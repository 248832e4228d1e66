//! Raw floating-point rasters: 8-byte magic `SDFRMAP1`, then little-endian
//! `u32` height, width, channels and bytes per value (4 or 8), then the
//! row-major interleaved values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SDFRMAP1";
const HEADER: usize = 8 + 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "raster size mismatch");
        Raster {
            height,
            width,
            channels,
            data,
        }
    }
}

pub fn write_raster(path: &Path, raster: &Raster) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER + raster.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [raster.height, raster.width, raster.channels, 4] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &raster.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Validation(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(bad("not a raster file (bad magic)"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels, size) = (field(0), field(1), field(2), field(3));
    let count = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("raster dimensions overflow"))?;
    let body = &bytes[HEADER..];
    if body.len() != count * size {
        return Err(bad(&format!(
            "expected {} bytes of data for {height}x{width}x{channels}, found {}",
            count * size,
            body.len()
        )));
    }
    let data = match size {
        4 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        8 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        _ => return Err(bad(&format!("unsupported value size {size}"))),
    };
    Ok(Raster {
        height,
        width,
        channels,
        data,
    })
}
