//! Smooth deformation fields, image warping, and the stability experiment
//! that measures how far deformed, translated, and unrelated images move in
//! the feature spaces of the convolutional tangent and fixed-feature
//! kernels.

use crate::conv::{
    cross_kernels, self_trace, ArchitectureSpec, ConvKernels, ImageSignal, KernelKind, LayerSpec,
    Pooling, SelfTrace,
};
use crate::error::{Error, Result};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A per-pixel displacement field in pixel units. The recorded field is
/// the single source of truth: its supremum and Jacobian supremum are
/// always recomputed from the grid, never remembered from construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    height: usize,
    width: usize,
    /// Row-major `[row displacement, column displacement]` per pixel.
    tau: Vec<[f64; 2]>,
}

impl DeformationField {
    pub fn new(height: usize, width: usize, tau: Vec<[f64; 2]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument { context: "field grid must be non-empty" });
        }
        if tau.len() != height * width {
            return Err(Error::ShapeMismatch { context: "field data does not fill its grid" });
        }
        if tau.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite { context: "deformation field entry" });
        }
        Ok(DeformationField { height, width, tau })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tau_at(&self, row: usize, col: usize) -> [f64; 2] {
        self.tau[row * self.width + col]
    }

    /// Largest displacement magnitude `max_u |tau(u)|`, recomputed.
    pub fn tau_sup(&self) -> f64 {
        let mut sup = 0.0_f64;
        for v in &self.tau {
            sup = sup.max(libm::sqrt(v[0] * v[0] + v[1] * v[1]));
        }
        sup
    }

    /// Largest operator norm of the finite-difference Jacobian of the
    /// field, recomputed: centered differences in the interior, one-sided
    /// at the borders, largest singular value of the 2x2 matrix per pixel.
    pub fn grad_sup(&self) -> f64 {
        let mut sup = 0.0_f64;
        for r in 0..self.height {
            for c in 0..self.width {
                let d_row = self.difference(r, c, 0);
                let d_col = self.difference(r, c, 1);
                // Jacobian row i is the gradient of component i.
                sup = sup.max(spectral_norm_2x2(d_row[0], d_col[0], d_row[1], d_col[1]));
            }
        }
        sup
    }

    /// Finite difference of `tau` along `axis` (0 = rows, 1 = columns) at
    /// one pixel, returned per component.
    fn difference(&self, row: usize, col: usize, axis: usize) -> [f64; 2] {
        let len = if axis == 0 { self.height } else { self.width };
        let pos = if axis == 0 { row } else { col };
        let fetch = |p: usize| {
            if axis == 0 {
                self.tau_at(p, col)
            } else {
                self.tau_at(row, p)
            }
        };
        if len == 1 {
            return [0.0, 0.0];
        }
        let (lo, hi, scale) = if pos == 0 {
            (pos, pos + 1, 1.0)
        } else if pos == len - 1 {
            (pos - 1, pos, 1.0)
        } else {
            (pos - 1, pos + 1, 0.5)
        };
        let a = fetch(lo);
        let b = fetch(hi);
        [(b[0] - a[0]) * scale, (b[1] - a[1]) * scale]
    }

    /// The field multiplied by `alpha`; both supremum quantities scale
    /// linearly with it.
    pub fn scaled(&self, alpha: f64) -> DeformationField {
        DeformationField {
            height: self.height,
            width: self.width,
            tau: self.tau.iter().map(|v| [alpha * v[0], alpha * v[1]]).collect(),
        }
    }
}

/// Largest singular value of `[[a, b], [c, d]]`.
fn spectral_norm_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let sum_sq = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (sum_sq * sum_sq - 4.0 * det * det).max(0.0);
    libm::sqrt((sum_sq + libm::sqrt(disc)) / 2.0)
}

/// Gaussian-weighted interpolation of coarse samples onto a fine grid.
/// Coarse cell centers are spread evenly over the image; weights are
/// `exp(-d^2 / (2 scale^2))` with distances in coarse-cell units, and
/// normalization makes a constant coarse field reproduce itself.
fn smoothed_upsample(
    height: usize,
    width: usize,
    coarse_rows: usize,
    coarse_cols: usize,
    scale: f64,
    samples: &[[f64; 2]],
) -> Vec<[f64; 2]> {
    let mut tau = Vec::with_capacity(height * width);
    for r in 0..height {
        let gr = (r as f64 + 0.5) * coarse_rows as f64 / height as f64 - 0.5;
        for c in 0..width {
            let gc = (c as f64 + 0.5) * coarse_cols as f64 / width as f64 - 0.5;
            let mut weight_sum = 0.0;
            let mut acc = [0.0, 0.0];
            for i in 0..coarse_rows {
                for j in 0..coarse_cols {
                    let dr = gr - i as f64;
                    let dc = gc - j as f64;
                    let w = libm::exp(-(dr * dr + dc * dc) / (2.0 * scale * scale));
                    let s = samples[i * coarse_cols + j];
                    weight_sum += w;
                    acc[0] += w * s[0];
                    acc[1] += w * s[1];
                }
            }
            tau.push([acc[0] / weight_sum, acc[1] / weight_sum]);
        }
    }
    tau
}

/// Draw a smooth random displacement field: i.i.d. standard-normal
/// 2-vectors on a coarse grid, Gaussian-smoothed interpolation up to the
/// image grid, then rescaling so the largest displacement is exactly one
/// pixel. Deterministic in the seed.
pub fn generate_tau(
    height: usize,
    width: usize,
    coarse_rows: usize,
    coarse_cols: usize,
    smoothing_scale: f64,
    seed: u64,
) -> Result<DeformationField> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument { context: "field grid must be non-empty" });
    }
    if coarse_rows < 2 || coarse_cols < 2 {
        return Err(Error::InvalidArgument { context: "coarse grid must be at least 2x2" });
    }
    if !(smoothing_scale > 0.0) || !smoothing_scale.is_finite() {
        return Err(Error::InvalidArgument { context: "smoothing scale must be positive" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<[f64; 2]> = (0..coarse_rows * coarse_cols)
        .map(|_| {
            [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]
        })
        .collect();
    let mut tau = smoothed_upsample(height, width, coarse_rows, coarse_cols, smoothing_scale, &samples);
    let mut sup = 0.0_f64;
    for v in &tau {
        sup = sup.max(libm::sqrt(v[0] * v[0] + v[1] * v[1]));
    }
    if sup <= 1e-30 {
        return Err(Error::DegenerateInput { context: "sampled field vanished everywhere" });
    }
    for v in &mut tau {
        v[0] /= sup;
        v[1] /= sup;
    }
    DeformationField::new(height, width, tau)
}

fn pixel(x: &ImageSignal, row: i64, col: i64, channel: usize) -> f64 {
    x.get(row, col).map_or(0.0, |s| s[channel])
}

fn check_field_shape(x: &ImageSignal, field: &DeformationField) -> Result<()> {
    if x.height() != field.height() || x.width() != field.width() {
        return Err(Error::ShapeMismatch { context: "field grid must match the image grid" });
    }
    Ok(())
}

/// First-order deformation `x(u) - alpha tau(u) . grad x(u)` with
/// finite-difference image gradients (centered in the interior, one-sided
/// at the borders, so constant images are exactly invariant).
pub fn apply_tangent_deformation(
    x: &ImageSignal,
    field: &DeformationField,
    alpha: f64,
) -> Result<ImageSignal> {
    check_field_shape(x, field)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite { context: "deformation scale" });
    }
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let mut data = Vec::with_capacity(h * w * ch);
    let diff = |lo: f64, hi: f64, interior: bool| if interior { (hi - lo) / 2.0 } else { hi - lo };
    for r in 0..h {
        for c in 0..w {
            let t = field.tau_at(r, c);
            for k in 0..ch {
                let (ri, ci) = (r as i64, c as i64);
                let grad_r = if h == 1 {
                    0.0
                } else if r == 0 {
                    diff(pixel(x, 0, ci, k), pixel(x, 1, ci, k), false)
                } else if r == h - 1 {
                    diff(pixel(x, ri - 1, ci, k), pixel(x, ri, ci, k), false)
                } else {
                    diff(pixel(x, ri - 1, ci, k), pixel(x, ri + 1, ci, k), true)
                };
                let grad_c = if w == 1 {
                    0.0
                } else if c == 0 {
                    diff(pixel(x, ri, 0, k), pixel(x, ri, 1, k), false)
                } else if c == w - 1 {
                    diff(pixel(x, ri, ci - 1, k), pixel(x, ri, ci, k), false)
                } else {
                    diff(pixel(x, ri, ci - 1, k), pixel(x, ri, ci + 1, k), true)
                };
                data.push(pixel(x, ri, ci, k) - alpha * (t[0] * grad_r + t[1] * grad_c));
            }
        }
    }
    ImageSignal::new(h, w, ch, data)
}

/// Exact warp `x(u - alpha tau(u))` by bilinear interpolation with zero
/// outside the grid. Agrees with [`apply_tangent_deformation`] to second
/// order in `alpha` on smooth images.
pub fn apply_warp(x: &ImageSignal, field: &DeformationField, alpha: f64) -> Result<ImageSignal> {
    check_field_shape(x, field)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite { context: "deformation scale" });
    }
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let mut data = Vec::with_capacity(h * w * ch);
    for r in 0..h {
        for c in 0..w {
            let t = field.tau_at(r, c);
            let pr = r as f64 - alpha * t[0];
            let pc = c as f64 - alpha * t[1];
            let r0 = libm::floor(pr) as i64;
            let c0 = libm::floor(pc) as i64;
            let fr = pr - r0 as f64;
            let fc = pc - c0 as f64;
            for k in 0..ch {
                let v00 = pixel(x, r0, c0, k);
                let v01 = pixel(x, r0, c0 + 1, k);
                let v10 = pixel(x, r0 + 1, c0, k);
                let v11 = pixel(x, r0 + 1, c0 + 1, k);
                let top = v00 * (1.0 - fc) + v01 * fc;
                let bottom = v10 * (1.0 - fc) + v11 * fc;
                data.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    ImageSignal::new(h, w, ch, data)
}

/// Unit row/column steps of the 8 compass directions, clockwise from
/// north.
pub const TRANSLATION_DIRECTIONS: [(i64, i64); 8] =
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Shift an image by one pixel along one of the eight compass directions,
/// filling the vacated border with zeros.
pub fn translate(x: &ImageSignal, direction: usize) -> Result<ImageSignal> {
    let Some(&(dr, dc)) = TRANSLATION_DIRECTIONS.get(direction) else {
        return Err(Error::InvalidArgument { context: "translation direction must be 0..8" });
    };
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let mut data = Vec::with_capacity(h * w * ch);
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                data.push(pixel(x, r as i64 - dr, c as i64 - dc, k));
            }
        }
    }
    ImageSignal::new(h, w, ch, data)
}

/// The four kinds of comparison sets of the stability experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Deformations,
    TranslationsAndDeformations,
    SameLabel,
    AnyLabel,
}

impl SetKind {
    pub fn label(self) -> &'static str {
        match self {
            SetKind::Deformations => "deformations",
            SetKind::TranslationsAndDeformations => "translations+deformations",
            SetKind::SameLabel => "same-label",
            SetKind::AnyLabel => "any-label",
        }
    }
}

/// A realized comparison set: images to measure against a reference.
#[derive(Debug, Clone)]
pub struct TransformSet {
    kind: SetKind,
    members: Vec<ImageSignal>,
}

impl TransformSet {
    pub fn new(kind: SetKind, members: Vec<ImageSignal>, reference: &ImageSignal) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument { context: "comparison set must be non-empty" });
        }
        let matches = |m: &ImageSignal| {
            m.height() == reference.height()
                && m.width() == reference.width()
                && m.channels() == reference.channels()
        };
        if !members.iter().all(matches) {
            return Err(Error::ShapeMismatch { context: "set members must match the reference shape" });
        }
        Ok(TransformSet { kind, members })
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    pub fn members(&self) -> &[ImageSignal] {
        &self.members
    }
}

/// Which image transform realizes a displacement field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformMode {
    /// First-order approximation `x - alpha tau . grad x` (the default).
    Tangent,
    /// Exact bilinear warp `x(u - alpha tau(u))`.
    Warp,
}

/// One comparison set of the stability experiment, before the deformation
/// scale is applied. Field-driven sets are re-realized at every `alpha`;
/// fixed sets (other digits) do not depend on it.
#[derive(Debug, Clone)]
pub enum StabilitySet {
    /// Deformations of the reference by the given fields.
    Deformed { fields: Vec<DeformationField> },
    /// Deformations followed by a 1-pixel compass translation each.
    TranslatedDeformed { fields: Vec<DeformationField>, directions: Vec<usize> },
    /// An alpha-independent set, e.g. other images of the same label.
    Fixed(TransformSet),
}

impl StabilitySet {
    pub fn kind(&self) -> SetKind {
        match self {
            StabilitySet::Deformed { .. } => SetKind::Deformations,
            StabilitySet::TranslatedDeformed { .. } => SetKind::TranslationsAndDeformations,
            StabilitySet::Fixed(set) => set.kind(),
        }
    }

    fn fields(&self) -> &[DeformationField] {
        match self {
            StabilitySet::Deformed { fields } => fields,
            StabilitySet::TranslatedDeformed { fields, .. } => fields,
            StabilitySet::Fixed(_) => &[],
        }
    }
}

/// Largest field Jacobian norm (after `alpha` scaling) below which the
/// square-root stability regime is considered valid; rows above it are
/// flagged, never dropped.
pub const GRAD_SUP_VALID_BOUND: f64 = 0.5;

/// One row of the stability experiment result table.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub kernel: KernelKind,
    pub set: SetKind,
    pub alpha: f64,
    pub mean_rel_dist: f64,
    pub std_rel_dist: f64,
    pub n_images: usize,
    /// Largest `alpha`-scaled Jacobian supremum over the set's fields
    /// (0 for fixed sets).
    pub grad_sup: f64,
    /// Largest `alpha`-scaled displacement supremum over the set's fields
    /// (0 for fixed sets).
    pub tau_sup: f64,
    /// True when `grad_sup` exceeds [`GRAD_SUP_VALID_BOUND`].
    pub grad_bound_exceeded: bool,
}

/// The standard experiment architecture: two 3x3-patch layers with
/// Gaussian pooling subsampled by 2 after the first layer and 5 after the
/// second (pooling scale `s/sqrt(2)`, filter half-size `s`).
pub fn default_stability_arch() -> Result<ArchitectureSpec> {
    ArchitectureSpec::new(
        None,
        alloc::vec![
            LayerSpec::boxed(3, 3, Pooling::gaussian(2)?)?,
            LayerSpec::boxed(3, 3, Pooling::gaussian(5)?)?,
        ],
    )
}

/// Relative feature distances `[tangent, fixed-feature]` from a
/// reference (with its precomputed self trace) to one member image — the
/// independent unit of work of the stability experiment, exposed so
/// drivers can evaluate members concurrently.
pub fn member_relative_distances(
    reference: &ImageSignal,
    reference_trace: &SelfTrace,
    member: &ImageSignal,
    arch: &ArchitectureSpec,
) -> Result<[f64; 2]> {
    let pick = |k: &ConvKernels, kind: KernelKind| match kind {
        KernelKind::Ntk => k.ntk,
        KernelKind::Ckn => k.ckn,
    };
    let self_kernels = reference_trace.kernels();
    let trace = self_trace(member, arch)?;
    let cross = cross_kernels(reference, member, arch, reference_trace, &trace)?;
    let member_kernels = trace.kernels();
    let mut out = [0.0; 2];
    for (i, kind) in [KernelKind::Ntk, KernelKind::Ckn].into_iter().enumerate() {
        let kxx = pick(&self_kernels, kind);
        if kxx < 1e-30 {
            return Err(Error::DegenerateInput { context: "reference image has vanishing self kernel" });
        }
        let kyy = pick(&member_kernels, kind);
        let kxy = pick(&cross, kind);
        let radicand = kxx + kyy - 2.0 * kxy;
        if radicand < -1e-10 {
            return Err(Error::NegativeValue {
                context: "squared feature distance",
                value: radicand,
            });
        }
        out[i] = libm::sqrt(radicand.max(0.0)) / libm::sqrt(kxx);
    }
    Ok(out)
}

/// Mean and population standard deviation per kernel from per-member
/// distance pairs, in the fixed `[tangent, fixed-feature]` order.
pub fn stats_from_distances(distances: &[[f64; 2]]) -> [(f64, f64); 2] {
    let n = distances.len() as f64;
    let mut stats = [(0.0, 0.0); 2];
    for i in 0..2 {
        let mean = distances.iter().map(|d| d[i]).sum::<f64>() / n;
        let var = distances.iter().map(|d| (d[i] - mean) * (d[i] - mean)).sum::<f64>() / n;
        stats[i] = (mean, libm::sqrt(var));
    }
    stats
}

/// Mean and population standard deviation of relative feature distances
/// from the reference to each member, for both kernels in one pass over
/// the set.
fn distance_stats(
    reference: &ImageSignal,
    reference_trace: &SelfTrace,
    members: &[ImageSignal],
    arch: &ArchitectureSpec,
) -> Result<[(f64, f64); 2]> {
    let distances = members
        .iter()
        .map(|member| member_relative_distances(reference, reference_trace, member, arch))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats_from_distances(&distances))
}

/// Build the member images a [`StabilitySet`] compares against the
/// reference at one deformation scale.
pub fn realize_stability_members(
    reference: &ImageSignal,
    set: &StabilitySet,
    alpha: f64,
    mode: TransformMode,
) -> Result<Vec<ImageSignal>> {
    let transform = |field: &DeformationField| match mode {
        TransformMode::Tangent => apply_tangent_deformation(reference, field, alpha),
        TransformMode::Warp => apply_warp(reference, field, alpha),
    };
    match set {
        StabilitySet::Deformed { fields } => fields.iter().map(transform).collect(),
        StabilitySet::TranslatedDeformed { fields, directions } => {
            if fields.len() != directions.len() {
                return Err(Error::ShapeMismatch {
                    context: "one translation direction needed per field",
                });
            }
            fields
                .iter()
                .zip(directions)
                .map(|(field, &dir)| translate(&transform(field)?, dir))
                .collect()
        }
        StabilitySet::Fixed(set) => Ok(set.members().to_vec()),
    }
}

/// Run the stability experiment: for every set, deformation scale, and
/// kernel, the mean and spread of relative feature distances from the
/// reference. Rows are ordered by (set, alpha, kernel); fixed sets repeat
/// their alpha-independent distances on every row so the table stays
/// rectangular. Deterministic: same inputs, bit-identical rows.
pub fn stability_experiment(
    reference: &ImageSignal,
    sets: &[StabilitySet],
    arch: &ArchitectureSpec,
    alphas: &[f64],
    mode: TransformMode,
) -> Result<Vec<StabilityRow>> {
    if alphas.is_empty() || sets.is_empty() {
        return Err(Error::InvalidArgument { context: "experiment needs sets and scales" });
    }
    if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidArgument { context: "deformation scales must be non-negative" });
    }
    for set in sets {
        for field in set.fields() {
            check_field_shape(reference, field)?;
        }
    }
    let reference_trace = self_trace(reference, arch)?;
    let mut rows = Vec::with_capacity(sets.len() * alphas.len() * 2);
    for set in sets {
        let fixed_stats = match set {
            StabilitySet::Fixed(_) => {
                let members = realize_stability_members(reference, set, 0.0, mode)?;
                Some((distance_stats(reference, &reference_trace, &members, arch)?, members.len()))
            }
            _ => None,
        };
        for &alpha in alphas {
            let (stats, n_images) = match &fixed_stats {
                Some((stats, n)) => (*stats, *n),
                None => {
                    let members = realize_stability_members(reference, set, alpha, mode)?;
                    (distance_stats(reference, &reference_trace, &members, arch)?, members.len())
                }
            };
            let mut grad_sup = 0.0_f64;
            let mut tau_sup = 0.0_f64;
            for field in set.fields() {
                grad_sup = grad_sup.max(alpha * field.grad_sup());
                tau_sup = tau_sup.max(alpha * field.tau_sup());
            }
            for (i, kind) in [KernelKind::Ntk, KernelKind::Ckn].into_iter().enumerate() {
                rows.push(StabilityRow {
                    kernel: kind,
                    set: set.kind(),
                    alpha,
                    mean_rel_dist: stats[i].0,
                    std_rel_dist: stats[i].1,
                    n_images,
                    grad_sup,
                    tau_sup,
                    grad_bound_exceeded: grad_sup > GRAD_SUP_VALID_BOUND,
                });
            }
        }
    }
    Ok(rows)
}

/// Fields with an `alpha`-scaled Jacobian supremum at or below this are
/// degenerate for slope fitting (pure translations move no mass through
/// the deformation term).
pub const SLOPE_FIT_MIN_GRAD: f64 = 1e-9;

/// Log-log slope of mean relative distance against the deformation scale
/// for one kernel and set kind, over `alpha` in `[alpha_min, alpha_max]`.
/// Rows with vanishing field gradients or non-positive means are excluded;
/// fewer than 3 surviving points is an error.
pub fn small_alpha_slope(
    rows: &[StabilityRow],
    kernel: KernelKind,
    set: SetKind,
    alpha_min: f64,
    alpha_max: f64,
) -> Result<f64> {
    let mut points = Vec::new();
    for row in rows {
        if row.kernel != kernel
            || row.set != set
            || row.alpha < alpha_min
            || row.alpha > alpha_max
            || row.grad_sup <= SLOPE_FIT_MIN_GRAD
            || row.mean_rel_dist <= 0.0
        {
            continue;
        }
        points.push((libm::log(row.alpha), libm::log(row.mean_rel_dist)));
    }
    if points.len() < 3 {
        return Err(Error::DegenerateInput {
            context: "slope fit needs at least 3 usable scales",
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateInput { context: "slope fit needs distinct scales" });
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_image(h: usize, w: usize, center: (f64, f64), spread: f64) -> ImageSignal {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let dr = r as f64 - center.0;
                let dc = c as f64 - center.1;
                data.push(libm::exp(-(dr * dr + dc * dc) / (2.0 * spread * spread)));
            }
        }
        ImageSignal::from_gray(h, w, data).unwrap()
    }

    fn small_arch() -> ArchitectureSpec {
        ArchitectureSpec::new(
            None,
            alloc::vec![
                LayerSpec::boxed(3, 3, Pooling::gaussian(2).unwrap()).unwrap(),
                LayerSpec::boxed(3, 3, Pooling::gaussian(2).unwrap()).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn generated_fields_are_deterministic_and_normalized() {
        let a = generate_tau(12, 10, 4, 4, 1.0, 99).unwrap();
        let b = generate_tau(12, 10, 4, 4, 1.0, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_tau(12, 10, 4, 4, 1.0, 100).unwrap());
        for seed in 0..100 {
            let field = generate_tau(9, 9, 4, 4, 1.0, seed).unwrap();
            assert!((field.tau_sup() - 1.0).abs() <= 1e-12, "seed {seed} not normalized");
        }
        assert!(generate_tau(9, 9, 1, 4, 1.0, 0).is_err());
        assert!(generate_tau(9, 9, 4, 4, 0.0, 0).is_err());
    }

    #[test]
    fn constant_coarse_samples_upsample_to_a_translation_field() {
        let samples = alloc::vec![[0.3, -0.7]; 16];
        let tau = smoothed_upsample(11, 7, 4, 4, 1.0, &samples);
        for v in &tau {
            assert_abs_diff_eq!(v[0], 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(v[1], -0.7, epsilon = 1e-12);
        }
        let field = DeformationField::new(11, 7, tau).unwrap();
        assert!(field.grad_sup() <= 1e-12, "constant field must have vanishing Jacobian");
    }

    #[test]
    fn supremum_quantities_scale_linearly() {
        let field = generate_tau(10, 10, 3, 5, 0.8, 7).unwrap();
        let grad = field.grad_sup();
        let tau = field.tau_sup();
        assert!(grad > 0.0);
        for alpha in [0.25, 3.7] {
            let scaled = field.scaled(alpha);
            assert_abs_diff_eq!(scaled.grad_sup(), alpha * grad, epsilon = 1e-12 * grad * alpha);
            assert_abs_diff_eq!(scaled.tau_sup(), alpha * tau, epsilon = 1e-12 * tau * alpha);
        }
    }

    #[test]
    fn jacobian_norm_matches_hand_singular_values() {
        // Diagonal matrix: largest |entry|.
        assert_abs_diff_eq!(spectral_norm_2x2(3.0, 0.0, 0.0, -2.0), 3.0, epsilon = 1e-14);
        // Rank-one [[1,1],[1,1]]: singular values {2, 0}.
        assert_abs_diff_eq!(spectral_norm_2x2(1.0, 1.0, 1.0, 1.0), 2.0, epsilon = 1e-14);
        // Rotation-like [[0,-1],[1,0]]: both singular values 1.
        assert_abs_diff_eq!(spectral_norm_2x2(0.0, -1.0, 1.0, 0.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn tangent_deformation_identity_cases() {
        let x = blob_image(8, 8, (3.5, 3.5), 2.0);
        let field = generate_tau(8, 8, 4, 4, 1.0, 3).unwrap();
        let unchanged = apply_tangent_deformation(&x, &field, 0.0).unwrap();
        assert_eq!(x.data(), unchanged.data());

        let constant = ImageSignal::from_gray(8, 8, alloc::vec![0.6; 64]).unwrap();
        let still = apply_tangent_deformation(&constant, &field, 1.3).unwrap();
        for (a, b) in constant.data().iter().zip(still.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn tangent_deformation_of_a_ramp_subtracts_the_scale() {
        // x(r, c) = r with tau = (1, 0): gradient is exactly (1, 0)
        // everywhere (one-sided borders included), so the output is
        // x - alpha at every pixel.
        let (h, w) = (6, 5);
        let data: Vec<f64> = (0..h).flat_map(|r| (0..w).map(move |_| r as f64)).collect();
        let ramp = ImageSignal::from_gray(h, w, data).unwrap();
        let field = DeformationField::new(h, w, alloc::vec![[1.0, 0.0]; h * w]).unwrap();
        let alpha = 0.15;
        let out = apply_tangent_deformation(&ramp, &field, alpha).unwrap();
        for (a, b) in ramp.data().iter().zip(out.data()) {
            assert_abs_diff_eq!(a - alpha, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn warp_identity_and_integer_translation() {
        let x = blob_image(9, 9, (4.0, 4.0), 2.0);
        let field = generate_tau(9, 9, 4, 4, 1.0, 5).unwrap();
        let same = apply_warp(&x, &field, 0.0).unwrap();
        assert_eq!(x.data(), same.data());

        // Constant integer displacement (1, 0) samples x(r-1, c), which is
        // exactly the 1-pixel south translation.
        let unit = DeformationField::new(9, 9, alloc::vec![[1.0, 0.0]; 81]).unwrap();
        let warped = apply_warp(&x, &unit, 1.0).unwrap();
        let south = translate(&x, 4).unwrap();
        assert_eq!(warped.data(), south.data());
    }

    #[test]
    fn warp_matches_tangent_to_second_order() {
        let x = blob_image(12, 12, (5.5, 5.5), 2.5);
        let field = generate_tau(12, 12, 4, 4, 1.0, 11).unwrap();
        let max_diff = |alpha: f64| {
            let warped = apply_warp(&x, &field, alpha).unwrap();
            let tangent = apply_tangent_deformation(&x, &field, alpha).unwrap();
            warped
                .data()
                .iter()
                .zip(tangent.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max)
        };
        let at_001 = max_diff(0.01);
        assert!(at_001 <= 1e-3, "first-order error {at_001} too large at alpha=0.01");
        // Halving alpha should shrink the disagreement roughly 4x.
        let ratio = max_diff(0.02) / at_001;
        assert!((2.0..8.0).contains(&ratio), "expected quadratic scaling, ratio {ratio}");
    }

    #[test]
    fn translations_cover_eight_directions_and_lose_only_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = ImageSignal::from_gray(7, 7, data).unwrap();
        let norm = x.norm_sq();
        for dir in 0..8 {
            let shifted = translate(&x, dir).unwrap();
            assert!(shifted.norm_sq() <= norm + 1e-15, "translation added mass");
            let opposite = (dir + 4) % 8;
            let back = translate(&shifted, opposite).unwrap();
            // Round trip equals the original wherever the round trip kept
            // support; elsewhere it is an erased border.
            for r in 0..7_i64 {
                for c in 0..7_i64 {
                    let b = back.get(r, c).unwrap()[0];
                    let a = x.get(r, c).unwrap()[0];
                    assert!(b == a || b == 0.0, "round trip corrupted interior at ({r},{c})");
                }
            }
            let erased: usize = back
                .data()
                .iter()
                .zip(x.data())
                .filter(|(b, a)| **b == 0.0 && **a != 0.0)
                .count();
            assert!(erased <= 13, "more than a 1-pixel border erased: {erased}");
        }
        assert!(translate(&x, 8).is_err());
    }

    #[test]
    fn experiment_rows_are_deterministic_and_zero_at_zero_scale() {
        let reference = blob_image(8, 8, (3.5, 3.5), 1.8);
        let fields: Vec<_> = (0..4).map(|s| generate_tau(8, 8, 4, 4, 1.0, s).unwrap()).collect();
        let sets = [StabilitySet::Deformed { fields }];
        let arch = small_arch();
        let alphas = [0.0, 0.1];
        let rows = stability_experiment(&reference, &sets, &arch, &alphas, TransformMode::Tangent)
            .unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.n_images, 4);
            assert_eq!(row.set, SetKind::Deformations);
            assert!(!row.grad_bound_exceeded);
            if row.alpha == 0.0 {
                assert_eq!(row.mean_rel_dist, 0.0, "zero scale must give exactly zero distance");
                assert_eq!(row.std_rel_dist, 0.0);
                assert_eq!(row.grad_sup, 0.0);
                assert_eq!(row.tau_sup, 0.0);
            } else {
                assert!(row.mean_rel_dist > 0.0);
                assert!(row.tau_sup > 0.0 && row.grad_sup > 0.0);
            }
        }
        let again = stability_experiment(&reference, &sets, &arch, &alphas, TransformMode::Tangent)
            .unwrap();
        assert_eq!(rows, again, "identical configs must give bit-identical tables");
    }

    #[test]
    fn distances_grow_with_scale_and_tangent_kernel_moves_more() {
        let reference = blob_image(8, 8, (3.5, 3.5), 1.8);
        let fields: Vec<_> = (0..6).map(|s| generate_tau(8, 8, 4, 4, 1.0, 40 + s).unwrap()).collect();
        let sets = [StabilitySet::Deformed { fields }];
        let arch = small_arch();
        let alphas = [0.05, 0.2, 0.8];
        let rows = stability_experiment(&reference, &sets, &arch, &alphas, TransformMode::Tangent)
            .unwrap();
        for kind in [KernelKind::Ntk, KernelKind::Ckn] {
            let means: Vec<f64> = rows
                .iter()
                .filter(|r| r.kernel == kind)
                .map(|r| r.mean_rel_dist)
                .collect();
            assert_eq!(means.len(), 3);
            assert!(
                means.windows(2).all(|w| w[0] < w[1]),
                "{kind:?} means not increasing: {means:?}"
            );
        }
        let at_small = |kind: KernelKind| {
            rows.iter()
                .find(|r| r.kernel == kind && r.alpha == 0.05)
                .unwrap()
                .mean_rel_dist
        };
        assert!(
            at_small(KernelKind::Ntk) >= at_small(KernelKind::Ckn),
            "tangent kernel should move at least as far at small scales"
        );
        let ntk_slope =
            small_alpha_slope(&rows, KernelKind::Ntk, SetKind::Deformations, 0.05, 0.8).unwrap();
        let ckn_slope =
            small_alpha_slope(&rows, KernelKind::Ckn, SetKind::Deformations, 0.05, 0.8).unwrap();
        assert!(
            ntk_slope < ckn_slope,
            "tangent-kernel slope {ntk_slope} should undercut fixed-feature slope {ckn_slope}"
        );
        assert!(ntk_slope > 0.0);
    }

    #[test]
    fn translated_and_fixed_sets_fill_their_columns() {
        let reference = blob_image(8, 8, (3.5, 3.5), 1.8);
        let fields: Vec<_> = (0..3).map(|s| generate_tau(8, 8, 4, 4, 1.0, 60 + s).unwrap()).collect();
        let others = alloc::vec![
            blob_image(8, 8, (2.5, 4.5), 1.3),
            blob_image(8, 8, (4.5, 2.5), 2.2),
        ];
        let fixed = TransformSet::new(SetKind::SameLabel, others, &reference).unwrap();
        let sets = [
            StabilitySet::TranslatedDeformed { fields, directions: alloc::vec![0, 3, 6] },
            StabilitySet::Fixed(fixed),
        ];
        let arch = small_arch();
        let rows = stability_experiment(&reference, &sets, &arch, &[0.1, 0.3], TransformMode::Tangent)
            .unwrap();
        assert_eq!(rows.len(), 8);
        let translated: Vec<_> =
            rows.iter().filter(|r| r.set == SetKind::TranslationsAndDeformations).collect();
        // A 1-pixel translation on top of a small deformation dominates
        // the distance, so translated sets sit well above zero.
        assert!(translated.iter().all(|r| r.mean_rel_dist > 0.0 && r.tau_sup > 0.0));
        let fixed_rows: Vec<_> = rows.iter().filter(|r| r.set == SetKind::SameLabel).collect();
        assert_eq!(fixed_rows.len(), 4);
        for row in &fixed_rows {
            assert_eq!(row.grad_sup, 0.0);
            assert_eq!(row.tau_sup, 0.0);
            assert!(row.mean_rel_dist > 0.0);
        }
        // Fixed sets are alpha-independent: both alphas carry the same
        // distances.
        assert_eq!(fixed_rows[0].mean_rel_dist, fixed_rows[2].mean_rel_dist);
        // Mismatched direction count is rejected.
        let bad = [StabilitySet::TranslatedDeformed {
            fields: alloc::vec![generate_tau(8, 8, 4, 4, 1.0, 70).unwrap()],
            directions: alloc::vec![0, 1],
        }];
        assert!(stability_experiment(&reference, &bad, &arch, &[0.1], TransformMode::Tangent)
            .is_err());
    }

    #[test]
    fn slope_fit_guards_against_degenerate_rows() {
        let template = StabilityRow {
            kernel: KernelKind::Ntk,
            set: SetKind::Deformations,
            alpha: 0.01,
            mean_rel_dist: 0.1,
            std_rel_dist: 0.0,
            n_images: 20,
            grad_sup: 0.2,
            tau_sup: 0.01,
            grad_bound_exceeded: false,
        };
        let rows: Vec<StabilityRow> = [0.01, 0.03, 0.1, 0.3]
            .iter()
            .map(|&alpha| StabilityRow {
                alpha,
                // Exact square-root growth: slope must come out 1/2.
                mean_rel_dist: libm::sqrt(alpha),
                grad_sup: 0.2 * alpha,
                ..template.clone()
            })
            .collect();
        let slope =
            small_alpha_slope(&rows, KernelKind::Ntk, SetKind::Deformations, 0.01, 0.3).unwrap();
        assert_abs_diff_eq!(slope, 0.5, epsilon = 1e-12);

        // Pure translations have vanishing field gradients; every row is
        // excluded and the fit refuses to run.
        let degenerate: Vec<StabilityRow> = rows
            .iter()
            .map(|r| StabilityRow { grad_sup: 0.0, ..r.clone() })
            .collect();
        assert!(small_alpha_slope(&degenerate, KernelKind::Ntk, SetKind::Deformations, 0.01, 0.3)
            .is_err());
        // Too narrow a range leaves under 3 points.
        assert!(small_alpha_slope(&rows, KernelKind::Ntk, SetKind::Deformations, 0.01, 0.03)
            .is_err());
    }
}
