//! Discrete 2-D multi-channel signals with zero padding outside the grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::arch::Pooling;
use crate::error::{Error, Result};

/// A finite `height x width` grid of `channels`-dimensional pixel vectors,
/// row-major with channels innermost. Positions outside the grid read as
/// the zero vector everywhere in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSignal {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageSignal {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument { context: "image dimensions must be positive" });
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch { context: "image buffer length" });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "image data" });
        }
        Ok(ImageSignal { height, width, channels, data })
    }

    /// Single-channel constructor.
    pub fn from_gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixel vector at `(row, col)`, or `None` outside the grid.
    pub fn get(&self, row: i64, col: i64) -> Option<&[f64]> {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            return None;
        }
        let base = (row as usize * self.width + col as usize) * self.channels;
        Some(&self.data[base..base + self.channels])
    }

    /// Squared l2 norm over all positions and channels.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Applies a pooling operator to the signal itself (per channel, two
    /// separable passes): `out[u] = sum_v h[s u - v] x[v]` with zero
    /// padding, grid shrunk to `ceil(len / s)` per axis.
    pub fn pool(&self, pooling: &Pooling) -> ImageSignal {
        let rows_pooled = pool_signal_axis(
            &self.data,
            self.height,
            self.width * self.channels,
            pooling,
        );
        let new_height = pooling.output_len(self.height);
        // Second pass along columns: treat each output row independently;
        // the inner contiguous unit is the channel vector.
        let mut out = vec![0.0; new_height * pooling.output_len(self.width) * self.channels];
        let new_width = pooling.output_len(self.width);
        for r in 0..new_height {
            let row = &rows_pooled[r * self.width * self.channels..(r + 1) * self.width * self.channels];
            let pooled = pool_signal_axis(row, self.width, self.channels, pooling);
            out[r * new_width * self.channels..(r + 1) * new_width * self.channels]
                .copy_from_slice(&pooled);
        }
        ImageSignal { height: new_height, width: new_width, channels: self.channels, data: out }
    }

    /// `self + c * other`, used by deformation arithmetic.
    pub fn axpy(&self, c: f64, other: &ImageSignal) -> Result<ImageSignal> {
        if self.height != other.height || self.width != other.width || self.channels != other.channels
        {
            return Err(Error::ShapeMismatch { context: "image linear combination" });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        ImageSignal::new(self.height, self.width, self.channels, data)
    }
}

/// Pools along the leading axis of a `[len, inner]` row-major buffer.
fn pool_signal_axis(data: &[f64], len: usize, inner: usize, pooling: &Pooling) -> Vec<f64> {
    let out_len = pooling.output_len(len);
    let mut out = vec![0.0; out_len * inner];
    let taps = pooling.taps();
    let half = pooling.half_size() as i64;
    let s = pooling.subsample() as i64;
    for u in 0..out_len {
        let center = u as i64 * s;
        let dst = &mut out[u * inner..(u + 1) * inner];
        for (ti, &t) in taps.iter().enumerate() {
            let v = center - (ti as i64 - half);
            if v < 0 || v >= len as i64 {
                continue;
            }
            let src = &data[v as usize * inner..(v as usize + 1) * inner];
            for (d, s_val) in dst.iter_mut().zip(src) {
                *d += t * s_val;
            }
        }
    }
    out
}
