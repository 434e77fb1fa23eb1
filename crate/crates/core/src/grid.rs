//! Dense per-pixel containers.
//!
//! Pixel coordinates are `(u, v)` = (column, row) with the origin at the
//! center of the top-left pixel. Storage is row-major.

use std::ops::{Add, Mul};

use nalgebra::Vector2;

use crate::error::{check_dims, Error, Result};

/// A row-major `width × height` grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel scalar values (masks, correlation maps, rigid maps, depth).
pub type ScalarMap = Grid<f64>;

/// Per-pixel `(u, v)` displacement in pixels.
pub type FlowField = Grid<Vector2<f64>>;

/// Soft `[0, 1]` or hard `{0, 1}` per-pixel mask.
pub type PixelMask = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let i = self.index(u, v);
        self.data[i] = value;
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Iterates `(u, v, &value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, x)| (i % w, i / w, x))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Combines two grids of equal size element by element.
    pub fn zip_map<U, R>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> R) -> Result<Grid<R>> {
        check_dims(self.dims(), other.dims())?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    /// True when `(x, y)` lies inside the pixel-center hull `[0, W-1] × [0, H-1]`.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

impl<T> Grid<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    /// Bilinear sample at continuous `(x, y)`; `None` when any of the
    /// contributing corners falls outside the grid.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<T> {
        if !self.contains(x, y) {
            return None;
        }
        Some(self.sample_inside(x, y))
    }

    /// Bilinear sample with `(x, y)` clamped onto the grid (replicate border).
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> T {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.sample_inside(x, y)
    }

    #[inline]
    fn sample_inside(&self, x: f64, y: f64) -> T {
        let (x0, ax, x1) = split_coord(x, self.width);
        let (y0, ay, y1) = split_coord(y, self.height);
        let top = *self.get(x0, y0) * (1.0 - ax) + *self.get(x1, y0) * ax;
        let bottom = *self.get(x0, y1) * (1.0 - ax) + *self.get(x1, y1) * ax;
        top * (1.0 - ay) + bottom * ay
    }
}

/// Returns `(floor, fraction, ceil-neighbour)` for a coordinate already in range.
#[inline]
pub(crate) fn split_coord(x: f64, len: usize) -> (usize, f64, usize) {
    let x0 = (x.floor() as usize).min(len - 1);
    let frac = x - x0 as f64;
    (x0, frac, (x0 + 1).min(len - 1))
}

impl ScalarMap {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    /// Checks that every value is finite and inside `[0, 1]`.
    pub fn check_unit_range(&self, what: &str) -> Result<()> {
        if let Some(bad) = self
            .data
            .iter()
            .find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "{what} value {bad} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid::filled(width, height, Vector2::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|f| f.x.is_finite() && f.y.is_finite())
    }

    /// Mask that is 1 where the flow target `x + F(x)` lies inside the grid.
    pub fn target_in_bounds(&self) -> PixelMask {
        Grid::from_fn(self.width, self.height, |u, v| {
            let f = self.get(u, v);
            if self.contains(u as f64 + f.x, v as f64 + f.y) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// A `H × W × C` image with intensities in `[0, 1]`, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "image intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from a per-pixel closure writing `channels` values.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let mut data = vec![0.0; width * height * channels];
        for v in 0..height {
            for u in 0..width {
                let i = (v * width + u) * channels;
                f(u, v, &mut data[i..i + channels]);
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Extracts one channel as a scalar map.
    pub fn channel(&self, c: usize) -> ScalarMap {
        Grid::from_fn(self.width, self.height, |u, v| self.pixel(u, v)[c])
    }

    /// Channel-averaged intensity.
    pub fn gray(&self) -> ScalarMap {
        let n = self.channels as f64;
        Grid::from_fn(self.width, self.height, |u, v| {
            self.pixel(u, v).iter().sum::<f64>() / n
        })
    }

    /// Bilinear sample into `out`; returns false (leaving `out` zeroed)
    /// when the sample point is outside the grid.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|o| *o = 0.0);
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return false;
        }
        let (x0, ax, x1) = split_coord(x, self.width);
        let (y0, ay, y1) = split_coord(y, self.height);
        let (p00, p10) = (self.pixel(x0, y0), self.pixel(x1, y0));
        let (p01, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
        for c in 0..self.channels {
            let top = p00[c] * (1.0 - ax) + p10[c] * ax;
            let bottom = p01[c] * (1.0 - ax) + p11[c] * ax;
            out[c] = top * (1.0 - ay) + bottom * ay;
        }
        true
    }
}

/// Per-pixel depth with a validity mask; valid depths are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    depth: ScalarMap,
    valid: Grid<bool>,
}

impl DepthMap {
    /// Wraps raw depths, marking non-finite or non-positive entries invalid.
    pub fn new(depth: ScalarMap) -> Self {
        let valid = depth.map(|d| d.is_finite() && *d > 0.0);
        Self { depth, valid }
    }

    pub fn with_mask(depth: ScalarMap, valid: Grid<bool>) -> Result<Self> {
        check_dims(depth.dims(), valid.dims())?;
        for (d, ok) in depth.iter().zip(valid.iter()) {
            if *ok && !(d.is_finite() && *d > 0.0) {
                return Err(Error::InvalidDepth(*d));
            }
        }
        Ok(Self { depth, valid })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn values(&self) -> &ScalarMap {
        &self.depth
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        if *self.valid.get(u, v) {
            Some(*self.depth.get(u, v))
        } else {
            None
        }
    }

    /// Depth values with invalid pixels replaced by `fill`.
    pub fn to_map(&self, fill: f64) -> ScalarMap {
        self.depth
            .zip_map(&self.valid, |d, ok| if *ok { *d } else { fill })
            .expect("depth and mask share dimensions")
    }

    pub fn scaled(&self, factor: f64) -> DepthMap {
        DepthMap {
            depth: self.depth.map(|d| d * factor),
            valid: self.valid.clone(),
        }
    }
}
