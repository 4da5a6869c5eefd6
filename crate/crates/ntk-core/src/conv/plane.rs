//! Position-pair kernel planes and the linear/pointwise operators that
//! propagate them through a convolutional architecture.
//!
//! A plane stores `E[u, u'] = <a(u), b(u')>` for every pair of positions of
//! two (possibly distinct) feature maps. All maps here are exact images of
//! the corresponding operators on the feature maps themselves:
//!
//! * patch extraction with normalization `1/sqrt(|S|)` per side turns into
//!   an offset-averaged sum over the plane diagonal directions,
//! * linear pooling acts separably on each of the four axes,
//! * the positive-homogeneous nonlinearity and its derivative act
//!   pointwise through the arc-cosine functions after normalizing by the
//!   two self-diagonals.

use alloc::vec;
use alloc::vec::Vec;

use crate::arccos::{clamp_cosine, kappa0_clamped, kappa1_clamped, ZERO_NORM_THRESHOLD};
use crate::conv::arch::Pooling;
use crate::conv::signal::ImageSignal;
use crate::error::{Error, Result};

/// Spatial extent of one side of a plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major storage of `E[u, u']`, `u` on `grid_a`, `u'` on `grid_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlane {
    grid_a: Grid,
    grid_b: Grid,
    data: Vec<f64>,
}

impl KernelPlane {
    fn zeros(grid_a: Grid, grid_b: Grid) -> Self {
        KernelPlane { grid_a, grid_b, data: vec![0.0; grid_a.len() * grid_b.len()] }
    }

    pub fn grid_a(&self) -> Grid {
        self.grid_a
    }

    pub fn grid_b(&self) -> Grid {
        self.grid_b
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn entry(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let ia = a.0 * self.grid_a.width + a.1;
        let ib = b.0 * self.grid_b.width + b.1;
        self.data[ia * self.grid_b.len() + ib]
    }

    /// Diagonal `E[u, u]`; defined only for planes over a common grid.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        if self.grid_a != self.grid_b {
            return Err(Error::ShapeMismatch { context: "plane diagonal needs matching grids" });
        }
        let n = self.grid_a.len();
        Ok((0..n).map(|i| self.data[i * n + i]).collect())
    }

    /// Sum of the diagonal; defined only for planes over a common grid.
    pub fn trace(&self) -> Result<f64> {
        Ok(self.diagonal()?.iter().sum())
    }
}

/// Builds the raw inner-product plane `E[u, u'] = <a[u], b[u']>` of two
/// signals with the same channel count, enforcing the plane budget.
pub fn raw_plane(a: &ImageSignal, b: &ImageSignal, max_plane_bytes: usize) -> Result<KernelPlane> {
    if a.channels() != b.channels() {
        return Err(Error::ShapeMismatch { context: "channel counts differ" });
    }
    let grid_a = Grid { height: a.height(), width: a.width() };
    let grid_b = Grid { height: b.height(), width: b.width() };
    let entries = grid_a.len() * grid_b.len();
    let required = entries * core::mem::size_of::<f64>();
    if required > max_plane_bytes {
        return Err(Error::PlaneBudgetExceeded {
            required_bytes: required,
            budget_bytes: max_plane_bytes,
        });
    }
    let c = a.channels();
    let mut plane = KernelPlane::zeros(grid_a, grid_b);
    let pa = grid_a.len();
    let pb = grid_b.len();
    for ia in 0..pa {
        let av = &a.data()[ia * c..(ia + 1) * c];
        let row = &mut plane.data[ia * pb..(ia + 1) * pb];
        for (ib, out) in row.iter_mut().enumerate() {
            let bv = &b.data()[ib * c..(ib + 1) * c];
            *out = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        }
    }
    Ok(plane)
}

/// Patch-extraction image on planes: with both sides normalized by
/// `1/sqrt(|S|)`, `out[u, u'] = (1/|S|) sum_{v in S} in[u + v, u' + v]`
/// (the same offset on both sides), zero outside the grid.
pub fn patch_plane(plane: &KernelPlane, offsets: &[(i64, i64)]) -> Result<KernelPlane> {
    if offsets.is_empty() {
        return Err(Error::InvalidArgument { context: "patch offset set must be non-empty" });
    }
    let ga = plane.grid_a;
    let gb = plane.grid_b;
    let pb = gb.len();
    let mut out = KernelPlane::zeros(ga, gb);
    for &(vr, vc) in offsets {
        let ar_lo = (-vr).max(0);
        let ar_hi = (ga.height as i64 - vr).min(ga.height as i64);
        let ac_lo = (-vc).max(0);
        let ac_hi = (ga.width as i64 - vc).min(ga.width as i64);
        let br_lo = (-vr).max(0);
        let br_hi = (gb.height as i64 - vr).min(gb.height as i64);
        let bc_lo = (-vc).max(0);
        let bc_hi = (gb.width as i64 - vc).min(gb.width as i64);
        if ar_lo >= ar_hi || ac_lo >= ac_hi || br_lo >= br_hi || bc_lo >= bc_hi {
            continue;
        }
        for ar in ar_lo..ar_hi {
            for ac in ac_lo..ac_hi {
                let ia_out = (ar as usize) * ga.width + ac as usize;
                let ia_in = ((ar + vr) as usize) * ga.width + (ac + vc) as usize;
                for br in br_lo..br_hi {
                    let out_base = ia_out * pb + (br as usize) * gb.width;
                    let in_base = ia_in * pb + ((br + vr) as usize) * gb.width;
                    for bc in bc_lo..bc_hi {
                        out.data[out_base + bc as usize] +=
                            plane.data[in_base + (bc + vc) as usize];
                    }
                }
            }
        }
    }
    let inv = 1.0 / offsets.len() as f64;
    for v in &mut out.data {
        *v *= inv;
    }
    Ok(out)
}

/// Pooling image on planes: the same linear pooling applied to both sides,
/// i.e. four separable 1-D passes (a-rows, a-cols, b-rows, b-cols).
pub fn pool_plane(plane: &KernelPlane, pooling: &Pooling) -> KernelPlane {
    let ga = plane.grid_a;
    let gb = plane.grid_b;
    let mut dims = [ga.height, ga.width, gb.height, gb.width];
    let mut data = plane.data.clone();
    for axis in 0..4 {
        let (next, new_len) = pool_axis(&data, dims, axis, pooling);
        data = next;
        dims[axis] = new_len;
    }
    KernelPlane {
        grid_a: Grid { height: dims[0], width: dims[1] },
        grid_b: Grid { height: dims[2], width: dims[3] },
        data,
    }
}

/// One separable pooling pass along `axis` of a dense 4-D row-major array.
fn pool_axis(data: &[f64], dims: [usize; 4], axis: usize, pooling: &Pooling) -> (Vec<f64>, usize) {
    let len = dims[axis];
    let out_len = pooling.output_len(len);
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let taps = pooling.taps();
    let half = pooling.half_size() as i64;
    let s = pooling.subsample() as i64;
    let mut out = vec![0.0; outer * out_len * inner];
    for o in 0..outer {
        let in_block = &data[o * len * inner..(o + 1) * len * inner];
        let out_block = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for u in 0..out_len {
            let center = u as i64 * s;
            let dst = &mut out_block[u * inner..(u + 1) * inner];
            for (ti, &t) in taps.iter().enumerate() {
                let v = center - (ti as i64 - half);
                if v < 0 || v >= len as i64 {
                    continue;
                }
                let src = &in_block[v as usize * inner..(v as usize + 1) * inner];
                for (d, s_val) in dst.iter_mut().zip(src) {
                    *d += t * s_val;
                }
            }
        }
    }
    (out, out_len)
}

/// Shared entry-wise normalization: splits an inner-product entry into
/// `(scale, cos)` given the two self-diagonals, treating positions with
/// squared norm below the zero threshold as exact zero vectors.
fn normalized_entry(value: f64, da: f64, db: f64, context: &'static str) -> Result<Option<(f64, f64)>> {
    if da < -1e-10 || db < -1e-10 {
        return Err(Error::NegativeValue { context, value: if da < db { da } else { db } });
    }
    if da <= ZERO_NORM_THRESHOLD || db <= ZERO_NORM_THRESHOLD {
        return Ok(None);
    }
    let scale = libm::sqrt(da * db);
    debug_assert!(
        value.abs() <= scale * (1.0 + 1e-9) + 1e-12,
        "plane entry violates the Cauchy-Schwarz bound"
    );
    let cos = clamp_cosine(value / scale)?;
    Ok(Some((scale, cos)))
}

/// Nonlinearity image on a covariance plane:
/// `out[u, u'] = sqrt(da[u] db[u']) * kappa1(cos)` where
/// `cos = sigma[u, u'] / sqrt(da[u] db[u'])`; zero whenever either
/// self-norm vanishes.
pub fn phi1_plane(sigma: &KernelPlane, diag_a: &[f64], diag_b: &[f64]) -> Result<KernelPlane> {
    map_normalized(sigma, diag_a, diag_b, "phi1 plane diagonal", |scale, cos, _| {
        scale * kappa1_clamped(cos)
    })
}

/// Gradient-feature image on a (covariance, tangent) plane pair:
/// `out[u, u'] = kappa0(cos) * gamma[u, u'] + sqrt(da du') * kappa1(cos)`.
pub fn m_plane(
    sigma: &KernelPlane,
    gamma: &KernelPlane,
    diag_a: &[f64],
    diag_b: &[f64],
) -> Result<KernelPlane> {
    if sigma.grid_a != gamma.grid_a || sigma.grid_b != gamma.grid_b {
        return Err(Error::ShapeMismatch { context: "covariance and tangent planes disagree" });
    }
    map_normalized(sigma, diag_a, diag_b, "gradient plane diagonal", |scale, cos, idx| {
        kappa0_clamped(cos) * gamma.data[idx] + scale * kappa1_clamped(cos)
    })
}

fn map_normalized(
    sigma: &KernelPlane,
    diag_a: &[f64],
    diag_b: &[f64],
    context: &'static str,
    f: impl Fn(f64, f64, usize) -> f64,
) -> Result<KernelPlane> {
    let pa = sigma.grid_a.len();
    let pb = sigma.grid_b.len();
    if diag_a.len() != pa || diag_b.len() != pb {
        return Err(Error::ShapeMismatch { context: "diagonal length does not match plane grid" });
    }
    let mut out = KernelPlane::zeros(sigma.grid_a, sigma.grid_b);
    for ia in 0..pa {
        let da = diag_a[ia];
        for ib in 0..pb {
            let idx = ia * pb + ib;
            match normalized_entry(sigma.data[idx], da, diag_b[ib], context)? {
                None => out.data[idx] = 0.0,
                Some((scale, cos)) => out.data[idx] = f(scale, cos, idx),
            }
        }
    }
    Ok(out)
}
