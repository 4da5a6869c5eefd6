//! Dynamic program over position-pair planes computing convolutional NTK
//! and fixed-feature (CKN-style) kernels.
//!
//! The kernel of a pair `(x, x')` needs three propagations: the two self
//! pairs `(x, x)` and `(x', x')` supply per-layer diagonal sequences (the
//! squared feature norms at every position), and the cross pair `(x, x')`
//! consumes them to normalize its arc-cosine steps. `SelfTrace` records a
//! self propagation so Gram computations reuse it across pairs.

use alloc::vec::Vec;

use crate::conv::arch::ArchitectureSpec;
use crate::conv::plane::{m_plane, patch_plane, phi1_plane, pool_plane, raw_plane, KernelPlane};
use crate::conv::signal::ImageSignal;
use crate::error::{Error, Result};

/// Both kernels produced by one propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvKernels {
    pub ntk: f64,
    pub ckn: f64,
}

/// Which kernel a Gram or distance computation should evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Ntk,
    Ckn,
}

/// Recorded self propagation of one image: the per-layer covariance
/// diagonals plus the self kernels and the raw input norm.
#[derive(Debug, Clone)]
pub struct SelfTrace {
    diagonals: Vec<Vec<f64>>,
    kernels: ConvKernels,
    norm_sq: f64,
}

impl SelfTrace {
    pub fn kernels(&self) -> ConvKernels {
        self.kernels
    }

    pub fn ntk(&self) -> f64 {
        self.kernels.ntk
    }

    pub fn ckn(&self) -> f64 {
        self.kernels.ckn
    }

    /// Squared norm of the raw input image (before any initial pooling).
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn depth(&self) -> usize {
        self.diagonals.len()
    }
}

/// Outcome of one plane propagation.
struct Propagation {
    kernels: ConvKernels,
    diagonals: Vec<Vec<f64>>,
}

/// Runs the plane DP for an image pair. With `diags = None` the pair must
/// be a self pair; the covariance diagonals are read off the plane itself
/// and collected. With `diags = Some((a, b))` the provided per-layer
/// diagonals normalize the cross plane. `sigma_hook` observes the
/// covariance plane of every stage (after patch extraction).
fn propagate(
    a: &ImageSignal,
    b: &ImageSignal,
    arch: &ArchitectureSpec,
    diags: Option<(&[Vec<f64>], &[Vec<f64>])>,
    mut sigma_hook: Option<&mut dyn FnMut(usize, &KernelPlane)>,
) -> Result<Propagation> {
    let layers = arch.layers();
    let depth = layers.len();
    if let Some((da, db)) = diags {
        if da.len() != depth || db.len() != depth {
            return Err(Error::ShapeMismatch { context: "self-trace depth does not match architecture" });
        }
    }

    let raw = match arch.initial_pool() {
        Some(p) => raw_plane(&a.pool(p), &b.pool(p), arch.max_plane_bytes())?,
        None => raw_plane(a, b, arch.max_plane_bytes())?,
    };
    let mut sigma = patch_plane(&raw, layers[0].patch())?;
    let mut gamma = sigma.clone();
    drop(raw);

    let mut collected: Vec<Vec<f64>> = Vec::with_capacity(depth);
    for stage in 0..depth {
        if diags.is_none() {
            collected.push(sigma.diagonal()?);
        }
        if let Some(hook) = sigma_hook.as_deref_mut() {
            hook(stage, &sigma);
        }
        let (da, db): (&[f64], &[f64]) = match diags {
            Some((a_diags, b_diags)) => (&a_diags[stage], &b_diags[stage]),
            None => (&collected[stage], &collected[stage]),
        };
        let w = phi1_plane(&sigma, da, db)?;
        let m = m_plane(&sigma, &gamma, da, db)?;
        let pooling = layers[stage].pooling();
        if stage + 1 < depth {
            let next_patch = layers[stage + 1].patch();
            sigma = patch_plane(&pool_plane(&w, pooling), next_patch)?;
            gamma = patch_plane(&pool_plane(&m, pooling), next_patch)?;
        } else {
            let ckn = pool_plane(&w, pooling).trace()?;
            let ntk = pool_plane(&m, pooling).trace()?;
            return Ok(Propagation { kernels: ConvKernels { ntk, ckn }, diagonals: collected });
        }
    }
    unreachable!("architectures always have at least one layer")
}

/// Self propagation of one image, recording per-layer diagonals for reuse.
pub fn self_trace(x: &ImageSignal, arch: &ArchitectureSpec) -> Result<SelfTrace> {
    let run = propagate(x, x, arch, None, None)?;
    Ok(SelfTrace { diagonals: run.diagonals, kernels: run.kernels, norm_sq: x.norm_sq() })
}

/// Cross kernels of a pair given previously recorded self traces.
pub fn cross_kernels(
    a: &ImageSignal,
    b: &ImageSignal,
    arch: &ArchitectureSpec,
    trace_a: &SelfTrace,
    trace_b: &SelfTrace,
) -> Result<ConvKernels> {
    let run = propagate(a, b, arch, Some((&trace_a.diagonals, &trace_b.diagonals)), None)?;
    Ok(run.kernels)
}

/// One-shot evaluation of both kernels on a pair (three propagations).
pub fn conv_pair(a: &ImageSignal, b: &ImageSignal, arch: &ArchitectureSpec) -> Result<ConvKernels> {
    let ta = self_trace(a, arch)?;
    let tb = self_trace(b, arch)?;
    cross_kernels(a, b, arch, &ta, &tb)
}

pub fn conv_ntk(a: &ImageSignal, b: &ImageSignal, arch: &ArchitectureSpec) -> Result<f64> {
    Ok(conv_pair(a, b, arch)?.ntk)
}

pub fn conv_ckn(a: &ImageSignal, b: &ImageSignal, arch: &ArchitectureSpec) -> Result<f64> {
    Ok(conv_pair(a, b, arch)?.ckn)
}

/// Covariance planes `Sigma_k[u, u'] = <x_k[u], x'_k[u']>` of the cross
/// pair at every stage (after patch extraction), for distributional checks
/// against explicit random networks.
pub fn covariance_stage_planes(
    a: &ImageSignal,
    b: &ImageSignal,
    arch: &ArchitectureSpec,
) -> Result<Vec<KernelPlane>> {
    let ta = self_trace(a, arch)?;
    let tb = self_trace(b, arch)?;
    let mut stages = Vec::with_capacity(arch.depth());
    let mut hook = |_stage: usize, plane: &KernelPlane| stages.push(plane.clone());
    propagate(a, b, arch, Some((&ta.diagonals, &tb.diagonals)), Some(&mut hook))?;
    Ok(stages)
}

/// Full symmetric Gram matrix (row-major `n x n`), with one self
/// propagation per image reused across all pairs.
pub fn gram(images: &[ImageSignal], arch: &ArchitectureSpec, kind: KernelKind) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument { context: "gram needs at least one image" });
    }
    let traces = images.iter().map(|im| self_trace(im, arch)).collect::<Result<Vec<_>>>()?;
    let n = images.len();
    let pick = |k: ConvKernels| match kind {
        KernelKind::Ntk => k.ntk,
        KernelKind::Ckn => k.ckn,
    };
    let mut out = alloc::vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = pick(traces[i].kernels);
        for j in i + 1..n {
            let v = pick(cross_kernels(&images[i], &images[j], arch, &traces[i], &traces[j])?);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// Feature-space distance from the squared-distance radicand
/// `K(x,x) + K(y,y) - 2 K(x,y)`, clamped at zero within `-1e-10`.
fn feature_distance_from(kxx: f64, kyy: f64, kxy: f64) -> Result<f64> {
    let radicand = kxx + kyy - 2.0 * kxy;
    if radicand < -1e-10 {
        return Err(Error::NegativeValue { context: "squared feature distance", value: radicand });
    }
    Ok(libm::sqrt(radicand.max(0.0)))
}

/// Mean and population standard deviation of the relative feature
/// distances `sqrt(K(x,x) + K(y,y) - 2 K(x,y)) / sqrt(K(x,x))` from a
/// reference `x` to every element of the set.
pub fn relative_distance(
    reference: &ImageSignal,
    set: &[ImageSignal],
    arch: &ArchitectureSpec,
    kind: KernelKind,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument { context: "relative distance needs a non-empty set" });
    }
    let tr = self_trace(reference, arch)?;
    let pick = |k: ConvKernels| match kind {
        KernelKind::Ntk => k.ntk,
        KernelKind::Ckn => k.ckn,
    };
    let kxx = pick(tr.kernels);
    if kxx < 1e-30 {
        return Err(Error::DegenerateInput { context: "reference image has vanishing self kernel" });
    }
    let scale = libm::sqrt(kxx);
    let mut dists = Vec::with_capacity(set.len());
    for y in set {
        let ty = self_trace(y, arch)?;
        let kxy = pick(cross_kernels(reference, y, arch, &tr, &ty)?);
        dists.push(feature_distance_from(kxx, pick(ty.kernels), kxy)? / scale);
    }
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}
