//! Dense channel-major tensors and images.
//!
//! Everything is `f32`, row-major with the channel as the outermost axis:
//! element `(c, r, k)` lives at `c * rows * cols + r * cols + k`.

use crate::error::{Error, Result};

/// A `channels x rows x cols` grid of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self::filled(channels, rows, cols, 0.0)
    }

    pub fn filled(channels: usize, rows: usize, cols: usize, value: f32) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![value; channels * rows * cols],
        }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::shape(
                (channels, rows, cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * rows * cols);
        for c in 0..channels {
            for r in 0..rows {
                for k in 0..cols {
                    data.push(f(c, r, k));
                }
            }
        }
        Self {
            channels,
            rows,
            cols,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, c: usize, r: usize, k: usize) -> usize {
        debug_assert!(c < self.channels && r < self.rows && k < self.cols);
        c * self.rows * self.cols + r * self.cols + k
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, k: usize) -> f32 {
        self.data[self.offset(c, r, k)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, k: usize, v: f32) {
        let i = self.offset(c, r, k);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channels `[start, end)` into a new map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.channels {
            return Err(Error::shape(
                self.shape(),
                format!("channels {start}..{end}"),
            ));
        }
        let n = self.plane_len();
        Self::from_vec(
            end - start,
            self.rows,
            self.cols,
            self.data[start * n..end * n].to_vec(),
        )
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Stacks `b`'s channels after `a`'s. Both maps must share the spatial size.
pub fn channel_concat(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.rows != b.rows || a.cols != b.cols {
        // An empty map contributes nothing regardless of its spatial size.
        if b.channels == 0 {
            return Ok(a.clone());
        }
        if a.channels == 0 {
            return Ok(b.clone());
        }
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(FeatureMap {
        channels: a.channels + b.channels,
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Hadamard product of two equally shaped maps.
pub fn elementwise_mul(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(FeatureMap {
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
        ..*a
    })
}

/// Element-wise sum of two equally shaped maps.
pub fn elementwise_add(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(FeatureMap {
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        ..*a
    })
}

/// An RGB image with values in `[0, 255]`, stored planar as a 3-channel map.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    map: FeatureMap,
}

impl Image {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            map: FeatureMap::zeros(3, rows, cols),
        }
    }

    pub fn filled(rows: usize, cols: usize, rgb: [f32; 3]) -> Self {
        Self {
            map: FeatureMap::from_fn(3, rows, cols, |c, _, _| rgb[c].clamp(0.0, 255.0)),
        }
    }

    /// Wraps a 3-channel map, clamping every value into `[0, 255]`.
    pub fn from_map(map: FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::shape("3 channels", map.shape()));
        }
        if map.data().iter().any(|v| v.is_nan()) {
            return Err(Error::domain("image contains NaN"));
        }
        Ok(Self {
            map: map.map(clamp_pixel),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        Self {
            map: FeatureMap::from_fn(3, rows, cols, |c, r, k| clamp_pixel(f(c, r, k))),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.map.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.map.cols()
    }

    #[inline]
    pub fn pixel(&self, r: usize, k: usize) -> [f32; 3] {
        [
            self.map.get(0, r, k),
            self.map.get(1, r, k),
            self.map.get(2, r, k),
        ]
    }

    /// Writes a pixel, clamping into range.
    #[inline]
    pub fn set_pixel(&mut self, r: usize, k: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.map.set(c, r, k, clamp_pixel(v));
        }
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    /// Applies `f` to every pixel triple, clamping the result.
    pub fn map_pixels(&self, f: impl Fn([f32; 3]) -> [f32; 3]) -> Image {
        let (rows, cols) = (self.rows(), self.cols());
        let n = rows * cols;
        let src = self.map.data();
        let mut out = vec![0.0f32; 3 * n];
        for i in 0..n {
            let px = f([src[i], src[n + i], src[2 * n + i]]);
            out[i] = clamp_pixel(px[0]);
            out[n + i] = clamp_pixel(px[1]);
            out[2 * n + i] = clamp_pixel(px[2]);
        }
        Image {
            map: FeatureMap::from_vec(3, rows, cols, out).expect("shape preserved"),
        }
    }

    /// Values scaled into `[0, 1]`.
    pub fn normalized(&self) -> FeatureMap {
        self.map.map(|v| v / 255.0)
    }

    pub fn in_range(&self) -> bool {
        self.map.data().iter().all(|v| (0.0..=255.0).contains(v))
    }
}

#[inline]
pub(crate) fn clamp_pixel(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 255.0)
    }
}
