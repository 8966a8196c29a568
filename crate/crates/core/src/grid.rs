//! Dense field types shared by every propagation operator.
//!
//! Storage is row-major with the channel index varying fastest, so a pixel's
//! channels are contiguous and a full image row is one contiguous slice.
//! Reads outside the image return zero.

use crate::error::{CspnError, Result};

/// Dense `height × width × channels` field of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        FeatureGrid {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    /// Wraps `values` laid out row-major, channel-minor. Rejects wrong
    /// lengths and non-finite entries.
    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(CspnError::shape(
                height * width * channels,
                values.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CspnError::invalid(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for ch in 0..channels {
                    values.push(f(i, j, ch));
                }
            }
        }
        FeatureGrid {
            height,
            width,
            channels,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, ch: usize) -> usize {
        (i * self.width + j) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.values[self.index(i, j, ch)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, ch: usize, value: f64) {
        debug_assert!(value.is_finite());
        let idx = self.index(i, j, ch);
        self.values[idx] = value;
    }

    /// Value at `(i - a, j - b, ch)`, or 0 when that position falls outside
    /// the grid.
    #[inline]
    pub fn neighbor_read(&self, i: usize, j: usize, a: isize, b: isize, ch: usize) -> f64 {
        let r = i as isize - a;
        let c = j as isize - b;
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            0.0
        } else {
            self.get(r as usize, c as usize, ch)
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Single channel `ch` as a one-channel grid.
    pub fn channel(&self, ch: usize) -> FeatureGrid {
        FeatureGrid::from_fn(self.height, self.width, 1, |i, j, _| self.get(i, j, ch))
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_shape(&self, other: &FeatureGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(CspnError::shape(self.shape(), other.shape()))
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &FeatureGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Dense `depth × height × width × channels` volume. The leading axis is the
/// disparity (or stack) axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    depth: usize,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureVolume {
    pub fn zeros(depth: usize, height: usize, width: usize, channels: usize) -> Self {
        FeatureVolume {
            depth,
            height,
            width,
            channels,
            values: vec![0.0; depth * height * width * channels],
        }
    }

    pub fn from_vec(
        depth: usize,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != depth * height * width * channels {
            return Err(CspnError::shape(
                depth * height * width * channels,
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CspnError::invalid("non-finite value in volume"));
        }
        Ok(FeatureVolume {
            depth,
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        depth: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(depth * height * width * channels);
        for l in 0..depth {
            for i in 0..height {
                for j in 0..width {
                    for ch in 0..channels {
                        values.push(f(l, i, j, ch));
                    }
                }
            }
        }
        FeatureVolume {
            depth,
            height,
            width,
            channels,
            values,
        }
    }

    /// Stacks equally shaped grids along a new leading axis.
    pub fn stack(layers: &[FeatureGrid]) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| CspnError::invalid("cannot stack zero layers"))?;
        let mut values = Vec::with_capacity(layers.len() * first.len());
        for layer in layers {
            first.check_shape(layer)?;
            values.extend_from_slice(layer.as_slice());
        }
        Ok(FeatureVolume {
            depth: layers.len(),
            height: first.height(),
            width: first.width(),
            channels: first.channels(),
            values,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.depth, self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, l: usize, i: usize, j: usize, ch: usize) -> usize {
        ((l * self.height + i) * self.width + j) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize, j: usize, ch: usize) -> f64 {
        self.values[self.index(l, i, j, ch)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, i: usize, j: usize, ch: usize, value: f64) {
        let idx = self.index(l, i, j, ch);
        self.values[idx] = value;
    }

    /// Value at `(l - c, i - a, j - b, ch)`, zero outside the volume.
    #[inline]
    pub fn neighbor_read(
        &self,
        l: usize,
        i: usize,
        j: usize,
        offset: [isize; 3],
        ch: usize,
    ) -> f64 {
        let dl = l as isize - offset[0];
        let r = i as isize - offset[1];
        let c = j as isize - offset[2];
        if dl < 0
            || r < 0
            || c < 0
            || dl >= self.depth as isize
            || r >= self.height as isize
            || c >= self.width as isize
        {
            0.0
        } else {
            self.get(dl as usize, r as usize, c as usize, ch)
        }
    }

    /// Layer `l` as a grid.
    pub fn layer(&self, l: usize) -> FeatureGrid {
        let n = self.height * self.width * self.channels;
        FeatureGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values[l * n..(l + 1) * n].to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs_diff(&self, other: &FeatureVolume) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &FeatureVolume) -> bool {
        self.shape() == other.shape()
    }
}

/// One validity flag per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, value: bool) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                bits.push(f(i, j));
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    /// Marks pixels whose first channel is strictly positive.
    pub fn positive(grid: &FeatureGrid) -> Self {
        BinaryMask::from_fn(grid.height(), grid.width(), |i, j| grid.get(i, j, 0) > 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.width + j] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn check_grid(&self, grid: &FeatureGrid) -> Result<()> {
        if self.height == grid.height() && self.width == grid.width() {
            Ok(())
        } else {
            Err(CspnError::shape(
                (self.height, self.width),
                (grid.height(), grid.width()),
            ))
        }
    }
}

/// Exchanges the contents of two equally shaped grids without copying values.
pub fn swap_buffers(front: &mut FeatureGrid, back: &mut FeatureGrid) -> Result<()> {
    front.check_shape(back)?;
    std::mem::swap(front, back);
    Ok(())
}

/// Front/back pair for Jacobi-style updates: readers see `front`, writers
/// fill `back`, then [`DoubleBuffer::swap`] publishes the new state.
#[derive(Clone, Debug)]
pub struct DoubleBuffer {
    front: FeatureGrid,
    back: FeatureGrid,
}

impl DoubleBuffer {
    pub fn new(front: FeatureGrid, back: FeatureGrid) -> Result<Self> {
        front.check_shape(&back)?;
        Ok(DoubleBuffer { front, back })
    }

    pub fn from_front(front: FeatureGrid) -> Self {
        let back = front.clone();
        DoubleBuffer { front, back }
    }

    pub fn front(&self) -> &FeatureGrid {
        &self.front
    }

    pub fn back(&self) -> &FeatureGrid {
        &self.back
    }

    /// Immutable front together with a mutable back.
    pub fn split(&mut self) -> (&FeatureGrid, &mut FeatureGrid) {
        (&self.front, &mut self.back)
    }

    pub fn swap(&mut self) {
        std::mem::swap(&mut self.front, &mut self.back);
    }

    pub fn into_front(self) -> FeatureGrid {
        self.front
    }
}
