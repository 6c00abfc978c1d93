//! PFM grayscale float images: "Pf" magic, dimensions, a scale line whose
//! sign gives the payload endianness, then f32 rows stored bottom-to-top.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};

const MAX_PIXELS: u64 = 1 << 26;

/// Pulls one whitespace-delimited ASCII token off the front.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, "truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(path, format!("non-ASCII header near byte {start}")))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f64>> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let magic = token(&bytes, &mut pos, path)?;
    match magic {
        "Pf" => {}
        "PF" => {
            return Err(Error::format(
                path,
                "color PFM (\"PF\") not supported, expected grayscale \"Pf\"",
            ))
        }
        other => {
            return Err(Error::format(
                path,
                format!("bad magic {other:?}, expected \"Pf\""),
            ))
        }
    }
    let w: i64 = token(&bytes, &mut pos, path)?
        .parse()
        .map_err(|_| Error::format(path, "unparseable width"))?;
    let h: i64 = token(&bytes, &mut pos, path)?
        .parse()
        .map_err(|_| Error::format(path, "unparseable height"))?;
    if w <= 0 || h <= 0 || (w as u64) * (h as u64) > MAX_PIXELS {
        return Err(Error::format(path, format!("implausible dimensions {w}x{h}")));
    }
    let scale: f64 = token(&bytes, &mut pos, path)?
        .parse()
        .map_err(|_| Error::format(path, "unparseable scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, format!("invalid scale {scale}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing header terminator"));
    }
    pos += 1;
    let (w, h) = (w as usize, h as usize);
    let expected = w * h * 4;
    if bytes.len() - pos != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, expected {expected} for {w}x{h}",
                bytes.len() - pos
            ),
        ));
    }
    let little = scale < 0.0;
    let mut grid = Grid::zeros(w, h);
    for file_row in 0..h {
        // Rows are stored bottom-to-top.
        let y = h - 1 - file_row;
        for x in 0..w {
            let off = pos + (file_row * w + x) * 4;
            let v = if little {
                LittleEndian::read_f32(&bytes[off..off + 4])
            } else {
                BigEndian::read_f32(&bytes[off..off + 4])
            };
            grid.set(x, y, v as f64);
        }
    }
    Ok(grid)
}

/// Writes little-endian (scale −1.0), rows bottom-to-top.
pub fn write_pfm(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let (w, h) = (grid.width(), grid.height());
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    let mut buf = [0u8; 4];
    for file_row in 0..h {
        let y = h - 1 - file_row;
        for x in 0..w {
            LittleEndian::write_f32(&mut buf, grid.at(x, y) as f32);
            bytes.extend_from_slice(&buf);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Depth maps ride on PFM with invalid pixels stored as 0.
pub fn read_pfm_depth(path: &Path) -> Result<DepthMap> {
    Ok(DepthMap::from_values(read_pfm(path)?))
}

pub fn write_pfm_depth(path: &Path, map: &DepthMap) -> Result<()> {
    let mut values = map.values().clone();
    for (v, ok) in values.data_mut().iter_mut().zip(map.validity().data()) {
        if !ok {
            *v = 0.0;
        }
    }
    write_pfm(path, &values)
}
