//! Optical-flow storage, displacement, and forward-backward occlusion
//! masking.

use crate::error::{Error, Result};
use crate::grid::{bilinear_taps, Grid};

/// Forward-backward error above which a pixel is considered dis-occluded.
pub const DEFAULT_FB_THRESHOLD: f64 = 1.0;

/// Per-pixel (du, dv) displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    data: Grid<[f64; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            data: Grid::new(width, height, [0.0, 0.0]),
        }
    }

    pub fn from_grid(data: Grid<[f64; 2]>) -> Self {
        FlowField { data }
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 2] {
        self.data.at(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, flow: [f64; 2]) {
        self.data.set(x, y, flow);
    }

    pub fn grid(&self) -> &Grid<[f64; 2]> {
        &self.data
    }

    /// Bilinear flow at continuous (u, v). None when out of bounds.
    pub fn sample(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        let taps = bilinear_taps(u, v, self.width(), self.height())?;
        let mut acc = [0.0, 0.0];
        for &(x, y, w) in &taps {
            let f = self.data.at(x, y);
            acc[0] += f[0] * w;
            acc[1] += f[1] * w;
        }
        Some(acc)
    }

    /// Displaced location x + F(x). The flow is read at the integer grid
    /// point when (u, v) is integral, bilinearly otherwise.
    pub fn displace(&self, u: f64, v: f64) -> Result<[f64; 2]> {
        let f = self
            .sample(u, v)
            .ok_or(Error::OutOfBounds(u, v))?;
        Ok([u + f[0], v + f[1]])
    }
}

/// Boolean mask over a pixel grid; true marks usable (not dis-occluded)
/// pixels. This is the complement of the paper convention that marks
/// dis-occluded pixels with 1, so loss sums iterate valid pixels directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    data: Grid<bool>,
}

impl ValidityMask {
    pub fn new_all_valid(width: usize, height: usize) -> Self {
        ValidityMask {
            data: Grid::new(width, height, true),
        }
    }

    pub fn new_all_invalid(width: usize, height: usize) -> Self {
        ValidityMask {
            data: Grid::new(width, height, false),
        }
    }

    pub fn from_grid(data: Grid<bool>) -> Self {
        ValidityMask { data }
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data.at(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, valid: bool) {
        self.data.set(x, y, valid);
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.data().iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / (self.width() * self.height()) as f64
    }

    /// Logical AND per pixel.
    pub fn intersect(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if !self.data.same_size(&other.data) {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        let data = self
            .data
            .data()
            .iter()
            .zip(other.data.data())
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(ValidityMask {
            data: Grid::from_vec(self.width(), self.height(), data),
        })
    }
}

/// Forward-backward consistency mask: pixel x is valid iff
/// ‖F_fwd(x) + F_bwd(x + F_fwd(x))‖₂ ≤ threshold and the displaced point is
/// in bounds. The backward flow is read bilinearly.
pub fn consistency_mask(
    forward: &FlowField,
    backward: &FlowField,
    threshold: f64,
) -> Result<ValidityMask> {
    if forward.width() != backward.width() || forward.height() != backward.height() {
        return Err(Error::DimensionMismatch(format!(
            "forward flow {}x{} vs backward {}x{}",
            forward.width(),
            forward.height(),
            backward.width(),
            backward.height()
        )));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "consistency threshold must be non-negative, got {threshold}"
        )));
    }
    let mut mask = ValidityMask::new_all_invalid(forward.width(), forward.height());
    for y in 0..forward.height() {
        for x in 0..forward.width() {
            let f = forward.at(x, y);
            let target = [x as f64 + f[0], y as f64 + f[1]];
            let Some(b) = backward.sample(target[0], target[1]) else {
                continue;
            };
            let err = ((f[0] + b[0]).powi(2) + (f[1] + b[1]).powi(2)).sqrt();
            mask.set(x, y, err <= threshold);
        }
    }
    Ok(mask)
}
