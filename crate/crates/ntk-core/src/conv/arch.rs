//! Architecture description for convolutional kernels: patch shapes and
//! pooling operators per layer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default ceiling on a single position-pair plane allocation (bytes).
pub const DEFAULT_PLANE_BUDGET_BYTES: usize = 512 * 1024 * 1024;

/// A linear pooling operator: separable convolution with a symmetric tap
/// vector followed by subsampling with stride `subsample`. Output length
/// along an axis of size `L` is `ceil(L / subsample)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooling {
    taps: Vec<f64>,
    half_size: usize,
    subsample: usize,
}

impl Pooling {
    /// Identity filter with optional subsampling: `out[u] = in[s u]`.
    pub fn dirac(subsample: usize) -> Result<Self> {
        if subsample == 0 {
            return Err(Error::InvalidArgument { context: "pooling subsample must be >= 1" });
        }
        Ok(Pooling { taps: vec![1.0], half_size: 0, subsample })
    }

    /// Gaussian filter matched to the subsampling factor: scale
    /// `sigma = s / sqrt(2)`, truncated at half-size `s`, taps renormalized
    /// to sum to one (so constants are preserved away from the border).
    pub fn gaussian(subsample: usize) -> Result<Self> {
        if subsample == 0 {
            return Err(Error::InvalidArgument { context: "pooling subsample must be >= 1" });
        }
        let sigma = subsample as f64 / core::f64::consts::SQRT_2;
        Self::gaussian_with(sigma, subsample, subsample)
    }

    /// Gaussian filter with explicit scale and truncation half-size.
    pub fn gaussian_with(sigma: f64, half_size: usize, subsample: usize) -> Result<Self> {
        if subsample == 0 || half_size == 0 {
            return Err(Error::InvalidArgument { context: "gaussian pooling needs positive half-size and subsample" });
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument { context: "gaussian pooling scale must be positive and finite" });
        }
        let mut taps: Vec<f64> = (0..=2 * half_size)
            .map(|i| {
                let o = i as f64 - half_size as f64;
                libm::exp(-o * o / (2.0 * sigma * sigma))
            })
            .collect();
        let total: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= total;
        }
        Ok(Pooling { taps, half_size, subsample })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn half_size(&self) -> usize {
        self.half_size
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    /// Output axis length after subsampling: `ceil(len / subsample)`.
    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.subsample)
    }
}

/// One convolutional layer: the patch offsets gathered before the
/// nonlinearity and the pooling applied after it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    patch: Vec<(i64, i64)>,
    pooling: Pooling,
}

impl LayerSpec {
    pub fn new(patch: Vec<(i64, i64)>, pooling: Pooling) -> Result<Self> {
        if patch.is_empty() {
            return Err(Error::InvalidArgument { context: "patch offset set must be non-empty" });
        }
        Ok(LayerSpec { patch, pooling })
    }

    /// Centered rectangular patch of the given size; even sizes lean toward
    /// the positive side (a 2x2 patch covers offsets {0,1} x {0,1}).
    pub fn boxed(rows: usize, cols: usize, pooling: Pooling) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument { context: "patch size must be positive" });
        }
        let row_lo = -((rows as i64 - 1) / 2);
        let col_lo = -((cols as i64 - 1) / 2);
        let mut patch = Vec::with_capacity(rows * cols);
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                patch.push((row_lo + r, col_lo + c));
            }
        }
        LayerSpec::new(patch, pooling)
    }

    pub fn patch(&self) -> &[(i64, i64)] {
        &self.patch
    }

    pub fn pooling(&self) -> &Pooling {
        &self.pooling
    }
}

/// Full architecture: an optional pooling applied to the raw signal before
/// the first patch extraction, then one `LayerSpec` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    initial_pool: Option<Pooling>,
    layers: Vec<LayerSpec>,
    max_plane_bytes: usize,
}

impl ArchitectureSpec {
    pub fn new(initial_pool: Option<Pooling>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument { context: "architecture needs at least one layer" });
        }
        Ok(ArchitectureSpec { initial_pool, layers, max_plane_bytes: DEFAULT_PLANE_BUDGET_BYTES })
    }

    pub fn with_plane_budget(mut self, max_plane_bytes: usize) -> Self {
        self.max_plane_bytes = max_plane_bytes;
        self
    }

    pub fn initial_pool(&self) -> Option<&Pooling> {
        self.initial_pool.as_ref()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn max_plane_bytes(&self) -> usize {
        self.max_plane_bytes
    }

    /// The degenerate architecture whose kernel coincides with the
    /// fully-connected one on 1x1 images: 1x1 patches, no pooling.
    pub fn pointwise(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument { context: "architecture needs at least one layer" });
        }
        let layers = (0..depth)
            .map(|_| LayerSpec::new(vec![(0, 0)], Pooling::dirac(1)?))
            .collect::<Result<Vec<_>>>()?;
        ArchitectureSpec::new(None, layers)
    }
}
