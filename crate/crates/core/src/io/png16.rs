//! Quantized 16-bit PNG depth maps: depth = raw × scale, raw 0 = missing.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};

pub fn read_png16_depth(path: &Path, scale: f64) -> Result<DepthMap> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "png16 scale must be positive, got {scale}"
        )));
    }
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::format(path, format!("png decode: {e}")))?;
    let gray = match img {
        DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::format(
                path,
                format!(
                    "expected 16-bit grayscale, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut values = Grid::zeros(w, h);
    for (x, y, Luma([raw])) in gray.enumerate_pixels() {
        values.set(x as usize, y as usize, *raw as f64 * scale);
    }
    Ok(DepthMap::from_values(values))
}

/// Quantizes by round-half-up. Valid depths must land in [1, 65535] raw
/// units; raw 0 is reserved for missing pixels.
pub fn write_png16_depth(path: &Path, map: &DepthMap, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "png16 scale must be positive, got {scale}"
        )));
    }
    let (w, h) = (map.width(), map.height());
    let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let raw = match map.get(x, y) {
                None => 0u16,
                Some(d) => {
                    let q = (d / scale + 0.5).floor();
                    if !(1.0..=65535.0).contains(&q) {
                        return Err(Error::format(
                            path,
                            format!("depth {d} at ({x}, {y}) not representable at scale {scale}"),
                        ));
                    }
                    q as u16
                }
            };
            img.put_pixel(x as u32, y as u32, Luma([raw]));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(path, format!("png encode: {e}")))?;
    Ok(())
}
