//! Row-major 2D storage and bilinear sampling shared by depth maps, flow
//! fields, masks, and intensity images.

use crate::error::{Error, Result};

/// Dense H×W grid, indexed (x, y) with (0, 0) at the top-left pixel center.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be nonzero");
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be nonzero");
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Grid {
            width,
            height,
            data,
        }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterates (x, y, &value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[self.idx(x, y)]
    }
}

impl Grid<f64> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid::new(width, height, 0.0)
    }

    /// Bilinear interpolation at continuous (u, v). None if any contributing
    /// point falls outside the grid.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let taps = bilinear_taps(u, v, self.width, self.height)?;
        Some(
            taps.iter()
                .map(|&(x, y, w)| self.at(x, y) * w)
                .sum(),
        )
    }
}

/// One bilinear tap: integer grid point and its interpolation weight.
pub type Tap = (usize, usize, f64);

/// The (up to four) grid points with nonzero bilinear weight at (u, v).
/// Zero-weight corners are dropped, so sampling exactly on the last row or
/// column stays in bounds. None if any contributing point is outside the
/// grid or the coordinates are non-finite.
pub fn bilinear_taps(u: f64, v: f64, width: usize, height: usize) -> Option<Vec<Tap>> {
    if !u.is_finite() || !v.is_finite() {
        return None;
    }
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let u0 = u0 as isize;
    let v0 = v0 as isize;

    let corners = [
        (u0, v0, (1.0 - fu) * (1.0 - fv)),
        (u0 + 1, v0, fu * (1.0 - fv)),
        (u0, v0 + 1, (1.0 - fu) * fv),
        (u0 + 1, v0 + 1, fu * fv),
    ];
    let mut taps = Vec::with_capacity(4);
    for (x, y, w) in corners {
        if w <= 0.0 {
            continue;
        }
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            return None;
        }
        taps.push((x as usize, y as usize, w));
    }
    Some(taps)
}

/// Per-pixel metric depth with validity flags. Valid pixels hold positive,
/// finite depths; invalid pixels are excluded from losses and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl DepthMap {
    /// Marks non-finite and non-positive entries invalid.
    pub fn from_values(values: Grid<f64>) -> Self {
        let valid = Grid::from_vec(
            values.width(),
            values.height(),
            values.data().iter().map(|d| d.is_finite() && *d > 0.0).collect(),
        );
        DepthMap { values, valid }
    }

    pub fn from_parts(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        if !values.same_size(&valid) {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} vs mask {}x{}",
                values.width(),
                values.height(),
                valid.width(),
                valid.height()
            )));
        }
        for (x, y, &ok) in valid.iter() {
            let d = values.at(x, y);
            if ok && !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidDepth(d));
            }
        }
        Ok(DepthMap { values, valid })
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Depth at an integer pixel; None when the pixel is invalid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.valid.at(x, y).then(|| self.values.at(x, y))
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.at(x, y)
    }

    /// Raw stored value, including at invalid pixels.
    #[inline]
    pub fn raw(&self, x: usize, y: usize) -> f64 {
        self.values.at(x, y)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.values.set(x, y, depth);
        self.valid.set(x, y, depth.is_finite() && depth > 0.0);
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid.set(x, y, false);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    /// Bilinear depth at continuous (u, v). None if out of bounds or any
    /// contributing pixel is invalid.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let taps = bilinear_taps(u, v, self.width(), self.height())?;
        let mut acc = 0.0;
        for &(x, y, w) in &taps {
            acc += self.get(x, y)? * w;
        }
        Some(acc)
    }

    /// Same taps as `sample`, exposed so gradients can distribute to the
    /// contributing pixels. None under the same conditions as `sample`.
    pub fn sample_with_taps(&self, u: f64, v: f64) -> Option<(f64, Vec<Tap>)> {
        let taps = bilinear_taps(u, v, self.width(), self.height())?;
        let mut acc = 0.0;
        for &(x, y, w) in &taps {
            acc += self.get(x, y)? * w;
        }
        Some((acc, taps))
    }

    pub fn scaled(&self, s: f64) -> DepthMap {
        let mut out = self.clone();
        for v in out.values.data_mut() {
            *v *= s;
        }
        out
    }
}
