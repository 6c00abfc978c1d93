//! Middlebury .flo optical-flow format: "PIEH" magic, little-endian i32
//! width and height, then row-major interleaved (du, dv) as f32.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"PIEH";

/// Guards against absurd headers before allocating.
const MAX_PIXELS: i64 = 1 << 26;

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic at byte 0, expected \"PIEH\""));
    }
    if bytes.len() < 12 {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes, need 12", bytes.len()),
        ));
    }
    let w = LittleEndian::read_i32(&bytes[4..8]) as i64;
    let h = LittleEndian::read_i32(&bytes[8..12]) as i64;
    if w <= 0 || h <= 0 || w * h > MAX_PIXELS {
        return Err(Error::format(
            path,
            format!("implausible dimensions {w}x{h} at byte 4"),
        ));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload ends at byte {}, expected {} for {w}x{h}",
                bytes.len(),
                expected
            ),
        ));
    }
    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let off = 12 + i * 8;
        data.push([
            LittleEndian::read_f32(&bytes[off..off + 4]) as f64,
            LittleEndian::read_f32(&bytes[off + 4..off + 8]) as f64,
        ]);
    }
    Ok(FlowField::from_grid(Grid::from_vec(w, h, data)))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let (w, h) = (flow.width(), flow.height());
    let mut bytes = Vec::with_capacity(12 + w * h * 8);
    bytes.extend_from_slice(MAGIC);
    let mut buf = [0u8; 4];
    LittleEndian::write_i32(&mut buf, w as i32);
    bytes.extend_from_slice(&buf);
    LittleEndian::write_i32(&mut buf, h as i32);
    bytes.extend_from_slice(&buf);
    for [u, v] in flow.grid().data() {
        LittleEndian::write_f32(&mut buf, *u as f32);
        bytes.extend_from_slice(&buf);
        LittleEndian::write_f32(&mut buf, *v as f32);
        bytes.extend_from_slice(&buf);
    }
    fs::write(path, bytes)?;
    Ok(())
}
