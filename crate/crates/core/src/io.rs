//! The JRG1 grid file format and small JSON helpers.
//!
//! Layout: the 8-byte magic `JRGRID01`, one UTF-8 JSON header line ending in
//! `\n` with keys `dtype` (`"f32"` or `"c64as2f32"`), `height` and `width`,
//! then the row-major little-endian payload. Complex grids are written as
//! interleaved `(re, im)` pairs. Values are held as `f64` in memory and
//! rounded to `f32` on save.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid, Shape};

pub const MAGIC: &[u8; 8] = b"JRGRID01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "c64as2f32")]
    C64As2F32,
}

impl Dtype {
    fn floats_per_entry(self) -> usize {
        match self {
            Dtype::F32 => 1,
            Dtype::C64As2F32 => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: Dtype,
    height: usize,
    width: usize,
}

/// A grid read back from disk, of whichever type the header declares.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyGrid {
    Real(RealGrid),
    Complex(ComplexGrid),
}

/// Encodes a real grid as JRG1 bytes.
pub fn encode_real(grid: &RealGrid) -> Vec<u8> {
    encode(Dtype::F32, grid.shape(), grid.data().iter().copied())
}

/// Encodes a complex grid as JRG1 bytes.
pub fn encode_complex(grid: &ComplexGrid) -> Vec<u8> {
    encode(
        Dtype::C64As2F32,
        grid.shape(),
        grid.data().iter().flat_map(|z| [z.re, z.im]),
    )
}

fn encode(dtype: Dtype, shape: Shape, values: impl Iterator<Item = f64>) -> Vec<u8> {
    let header = serde_json::to_string(&Header {
        dtype,
        height: shape.height,
        width: shape.width,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + 4 * shape.len() * dtype.floats_per_entry());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes JRG1 bytes; `origin` is only used in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<AnyGrid> {
    let fail = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("unterminated header".into()))?;
    let header: Header = std::str::from_utf8(&rest[..newline])
        .map_err(|e| fail(format!("header is not UTF-8: {e}")))
        .and_then(|s| serde_json::from_str(s).map_err(|e| fail(format!("bad header: {e}"))))?;
    let payload = &rest[newline + 1..];
    let n_floats = header
        .height
        .checked_mul(header.width)
        .and_then(|n| n.checked_mul(header.dtype.floats_per_entry()))
        .ok_or_else(|| fail("shape overflows".into()))?;
    if payload.len() != 4 * n_floats {
        return Err(fail(format!(
            "payload has {} bytes, header {}x{} {:?} needs {}",
            payload.len(),
            header.height,
            header.width,
            header.dtype,
            4 * n_floats
        )));
    }
    let floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let shape = Shape::new(header.height, header.width);
    let grid = match header.dtype {
        Dtype::F32 => AnyGrid::Real(RealGrid::new(shape.height, shape.width, floats.collect())?),
        Dtype::C64As2F32 => {
            let flat: Vec<f64> = floats.collect();
            let data = flat
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect();
            AnyGrid::Complex(ComplexGrid::new(shape.height, shape.width, data)?)
        }
    };
    Ok(grid)
}

pub fn save_real(grid: &RealGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_real(grid)).map_err(|e| Error::io(path, e))
}

pub fn save_complex(grid: &ComplexGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_complex(grid)).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<AnyGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn load_real(path: &Path) -> Result<RealGrid> {
    match load_grid(path)? {
        AnyGrid::Real(g) => Ok(g),
        AnyGrid::Complex(_) => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected dtype f32, found c64as2f32".into(),
        }),
    }
}

pub fn load_complex(path: &Path) -> Result<ComplexGrid> {
    match load_grid(path)? {
        AnyGrid::Complex(g) => Ok(g),
        AnyGrid::Real(_) => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected dtype c64as2f32, found f32".into(),
        }),
    }
}

/// Rounds every entry to the nearest `f32`, i.e. what a save/load cycle yields.
pub fn quantize_real(grid: &RealGrid) -> RealGrid {
    grid.map(|x| x as f32 as f64)
}

pub fn quantize_complex(grid: &ComplexGrid) -> ComplexGrid {
    ComplexGrid::from_parts(
        grid.shape(),
        grid.data()
            .iter()
            .map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64))
            .collect(),
    )
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
