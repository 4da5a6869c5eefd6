//! Numeric probes for the smoothness geometry of the arc-cosine feature
//! maps: Holder continuity of the 0-homogeneous features, the square-root
//! blow-up that makes the two-layer tangent features non-Lipschitz, norm
//! homogeneity of the kernel, and the finite Lipschitz constants recovered
//! by smooth activations.
//!
//! Every feature-space distance here is evaluated through kernels,
//! `|Phi(x) - Phi(y)|^2 = K(x,x) + K(y,y) - 2 K(x,y)`, which is exact and
//! the only finite-dimensional handle on these feature maps.

use crate::activation::{kernel_from_rule, Activation};
use crate::arccos::{
    clamp_cosine, kappa0_clamped, kappa1_clamped, kappa_ntk, two_layer_ntk, ZERO_NORM_THRESHOLD,
};
use crate::conv::ImageSignal;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Closest cosine to 1 at which the ratio probes are evaluated. The ratios
/// are finite on `[-1, 1)` but 0/0 at 1, and this is the last grid point
/// before double rounding makes `2 - 2u` collapse.
pub const PROBE_CLOSEST_APPROACH: f64 = 1.0 - 1e-12;

/// A ratio quantity evaluated over a grid of cosines approaching 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioProbe {
    u_grid: Vec<f64>,
    values: Vec<f64>,
    sup: f64,
}

impl RatioProbe {
    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest ratio observed on the grid.
    pub fn sup(&self) -> f64 {
        self.sup
    }
}

/// The two feature-to-input distance ratios worth probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// `(2 - 2 kappa0(u)) / sqrt(2 - 2u)`: squared feature distance of the
    /// 0-homogeneous map against the square root of the input distance.
    Phi0Holder,
    /// `(4 - 2 kappa(u)) / (2 - 2u)`: squared tangent-feature distance
    /// against squared input distance on the sphere.
    NtkNonLip,
}

fn ratio_domain(u: f64) -> Result<f64> {
    let u = clamp_cosine(u)?;
    if u >= 1.0 {
        return Err(Error::InvalidArgument {
            context: "feature distance ratio is 0/0 at cosine 1",
        });
    }
    Ok(u)
}

/// Squared feature distance of the 0-homogeneous map `phi0` over the
/// square-rooted input distance on the unit sphere:
/// `(2 - 2 kappa0(u)) / sqrt(2 - 2u)`.
///
/// Stays below 1 on all of `[-1, 1)` and tends to `2/pi` as `u -> 1`
/// (from `arccos(u) ~ sqrt(2(1-u))`), so `phi0` is 1/2-Holder and the
/// exponent is sharp.
pub fn phi0_holder_ratio(u: f64) -> Result<f64> {
    let u = ratio_domain(u)?;
    Ok((2.0 - 2.0 * kappa0_clamped(u)) / libm::sqrt(2.0 - 2.0 * u))
}

/// Squared tangent-feature distance over squared input distance on the
/// unit sphere: `(2 kappa(1) - 2 kappa(u)) / (2 - 2u)`.
///
/// Grows like `(1 - u)^{-1/2}` as `u -> 1` because `kappa0` enters the
/// tangent kernel with a square-root cusp, so the tangent feature map is
/// not Lipschitz at any scale.
pub fn ntk_nonlip_ratio(u: f64) -> Result<f64> {
    let u = ratio_domain(u)?;
    Ok((4.0 - 2.0 * kappa_ntk(u)?) / (2.0 - 2.0 * u))
}

/// Grid of cosines for the ratio probes: a uniform sweep of `[-1, 0.9]`
/// joined with the logarithmic approach `u = 1 - 10^{-j}`, `j = 0..=12`,
/// sorted ascending with exact duplicates removed.
pub fn ratio_probe_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=38).map(|i| i as f64 / 20.0 - 1.0).collect();
    grid.extend((0..=12).map(|j| 1.0 - libm::pow(10.0, -(j as f64))));
    grid.sort_unstable_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
    grid.dedup();
    grid
}

/// Evaluate one of the [`RatioKind`] quantities over [`ratio_probe_grid`].
pub fn ratio_probe(kind: RatioKind) -> Result<RatioProbe> {
    let u_grid = ratio_probe_grid();
    let mut values = Vec::with_capacity(u_grid.len());
    let mut sup = f64::NEG_INFINITY;
    for &u in &u_grid {
        let value = match kind {
            RatioKind::Phi0Holder => phi0_holder_ratio(u)?,
            RatioKind::NtkNonLip => ntk_nonlip_ratio(u)?,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "ratio probe value" });
        }
        sup = sup.max(value);
        values.push(value);
    }
    Ok(RatioProbe { u_grid, values, sup })
}

fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { context: "distance between unequal lengths" });
    }
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        acc += d * d;
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite { context: "distance accumulation" });
    }
    Ok(libm::sqrt(acc))
}

fn norm_slice(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for a in x {
        acc += a * a;
    }
    libm::sqrt(acc)
}

fn dot_slice(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

/// Turn `K(x,x) + K(y,y) - 2 K(x,y)` into a distance, absorbing rounding
/// noise slightly below zero and rejecting genuinely negative values.
fn distance_from_kernels(kxx: f64, kyy: f64, kxy: f64, context: &'static str) -> Result<f64> {
    let radicand = kxx + kyy - 2.0 * kxy;
    let tolerance = 1e-10 * (kxx + kyy).abs().max(1.0);
    if radicand < -tolerance {
        return Err(Error::NegativeValue { context, value: radicand });
    }
    Ok(libm::sqrt(radicand.max(0.0)))
}

/// Feature-space distance of the two-layer tangent kernel against its
/// Holder-type upper bound.
///
/// Returns `(lhs, rhs)` with
/// `lhs = sqrt(K(x,x) + K(y,y) - 2 K(x,y))` for the two-layer tangent
/// kernel and `rhs = sqrt(min(|x|, |y|) |x - y|) + 2 |x - y|`. The bound
/// `lhs <= rhs + 1e-10` holds for all nonzero inputs; the square-root term
/// is what the non-Lipschitz ratio makes unavoidable.
pub fn holder_bound_check(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let nx = norm_slice(x);
    let ny = norm_slice(y);
    if nx <= ZERO_NORM_THRESHOLD || ny <= ZERO_NORM_THRESHOLD {
        return Err(Error::DegenerateInput { context: "holder bound needs nonzero inputs" });
    }
    let kxx = two_layer_ntk(x, x)?;
    let kyy = two_layer_ntk(y, y)?;
    let kxy = two_layer_ntk(x, y)?;
    let lhs = distance_from_kernels(kxx, kyy, kxy, "holder bound feature distance")?;
    let dist = euclidean_distance(x, y)?;
    let rhs = libm::sqrt(nx.min(ny) * dist) + 2.0 * dist;
    Ok((lhs, rhs))
}

/// Inner product of the per-position features `M(x,y)(u)` that pair a
/// 0-homogeneous direction factor with a carried signal:
/// `kappa0(cos) <y(u), y'(u)> + |x(u)| |x'(u)| kappa1(cos)`.
/// A vanishing direction input maps the whole feature to zero.
fn m_entry(xu: &[f64], yu: &[f64], xpu: &[f64], ypu: &[f64]) -> f64 {
    let nx_sq = dot_slice(xu, xu);
    let nxp_sq = dot_slice(xpu, xpu);
    if libm::sqrt(nx_sq) <= ZERO_NORM_THRESHOLD || libm::sqrt(nxp_sq) <= ZERO_NORM_THRESHOLD {
        return 0.0;
    }
    if xu == xpu {
        // Equal direction inputs have cosine exactly 1; recomputing it
        // from rounded norms would land 1 ulp below and the square-root
        // cusp of kappa0 would amplify that to ~1e-8. Taking kappa0 =
        // kappa1 = 1 directly keeps coincident pairs at distance zero.
        return dot_slice(yu, ypu) + nx_sq;
    }
    let nx = libm::sqrt(nx_sq);
    let nxp = libm::sqrt(nxp_sq);
    let cos = (dot_slice(xu, xpu) / (nx * nxp)).clamp(-1.0, 1.0);
    kappa0_clamped(cos) * dot_slice(yu, ypu) + nx * nxp * kappa1_clamped(cos)
}

/// Self inner product of `M(x,y)(u)`: `|y(u)|^2 + |x(u)|^2`, zero when the
/// direction input vanishes.
fn m_self_entry(xu: &[f64], yu: &[f64]) -> f64 {
    let nx_sq = dot_slice(xu, xu);
    if libm::sqrt(nx_sq) <= ZERO_NORM_THRESHOLD {
        return 0.0;
    }
    dot_slice(yu, yu) + nx_sq
}

/// Smoothness of the paired feature operator `M` on discrete vector-valued
/// signals.
///
/// Returns `(lhs, rhs)` with `lhs = |M(x,y) - M(x',y')|` accumulated from
/// per-position feature inner products and
/// `rhs = sqrt(min(|y|, |y'|) |x - x'|) + |x - x'| + |y - y'|` over whole-
/// signal norms. The bound `lhs <= rhs + 1e-10` combines the Holder
/// continuity of the direction factor with the 1-Lipschitz carried factor.
pub fn m_smoothness_check(
    x: &ImageSignal,
    y: &ImageSignal,
    x_prime: &ImageSignal,
    y_prime: &ImageSignal,
) -> Result<(f64, f64)> {
    let same_shape = |a: &ImageSignal, b: &ImageSignal| {
        a.height() == b.height() && a.width() == b.width() && a.channels() == b.channels()
    };
    if !same_shape(x, x_prime) || !same_shape(y, y_prime) {
        return Err(Error::ShapeMismatch { context: "paired signals must match shapes" });
    }
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::ShapeMismatch { context: "direction and carried grids must match" });
    }

    let mut self_sum = 0.0;
    let mut cross_sum = 0.0;
    for row in 0..x.height() as i64 {
        for col in 0..x.width() as i64 {
            let xu = x.get(row, col).expect("in-grid position");
            let yu = y.get(row, col).expect("in-grid position");
            let xpu = x_prime.get(row, col).expect("in-grid position");
            let ypu = y_prime.get(row, col).expect("in-grid position");
            self_sum += m_self_entry(xu, yu) + m_self_entry(xpu, ypu);
            cross_sum += m_entry(xu, yu, xpu, ypu);
        }
    }
    let radicand = self_sum - 2.0 * cross_sum;
    let tolerance = 1e-10 * self_sum.abs().max(1.0);
    if radicand < -tolerance {
        return Err(Error::NegativeValue {
            context: "paired feature distance",
            value: radicand,
        });
    }
    let lhs = libm::sqrt(radicand.max(0.0));

    let dx = euclidean_distance(x.data(), x_prime.data())?;
    let dy = euclidean_distance(y.data(), y_prime.data())?;
    let ny = libm::sqrt(y.norm_sq());
    let nyp = libm::sqrt(y_prime.norm_sq());
    let rhs = libm::sqrt(ny.min(nyp) * dx) + dx + dy;
    Ok((lhs, rhs))
}

/// Relative departure of the two-layer tangent kernel from exact
/// 1-homogeneity in each argument:
/// `|K(ax, bx') - ab K(x, x')| / |ab K(x, x')|`.
///
/// The kernel depends on norms only through the prefactor `|x| |y|`, so
/// this is rounding-level (`< 1e-12`) for any positive scales.
pub fn homogeneity_check(x: &[f64], x_prime: &[f64], a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument { context: "homogeneity scales must be positive" });
    }
    let base = two_layer_ntk(x, x_prime)?;
    let reference = a * b * base;
    if reference.abs() <= ZERO_NORM_THRESHOLD {
        return Err(Error::DegenerateInput {
            context: "kernel value too small for a relative comparison",
        });
    }
    let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
    let bx: Vec<f64> = x_prime.iter().map(|v| b * v).collect();
    let scaled = two_layer_ntk(&ax, &bx)?;
    Ok((scaled - reference).abs() / reference.abs())
}

/// Dimension of the random unit vectors drawn by
/// [`smooth_activation_lip_check`]. Any dimension >= 2 samples the full
/// cosine range; 8 keeps the sweep cheap while avoiding the degenerate
/// +/-1-only cosines of dimension 1.
pub const LIP_CHECK_DIM: usize = 8;

/// Node count of the Gauss-Hermite tensor rule used per kernel value in
/// [`smooth_activation_lip_check`]. Smooth activations converge to
/// rounding error well below this.
pub const LIP_CHECK_NODES: usize = 160;

fn feature_ratio_from_rule(
    activation: &dyn Activation,
    rule: &QuadratureRule,
    k_self: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let dist = euclidean_distance(x, y)?;
    if dist <= ZERO_NORM_THRESHOLD {
        return Err(Error::DegenerateInput { context: "coincident pair has no ratio" });
    }
    let u = clamp_cosine(dot_slice(x, y) / (norm_slice(x) * norm_slice(y)))?;
    let k_cross = kernel_from_rule(activation, u, rule)?;
    let feature_dist = distance_from_kernels(k_self, k_self, k_cross, "smooth feature distance")?;
    Ok(feature_dist / dist)
}

/// Largest feature-to-input distance ratio of a smooth activation's
/// two-layer tangent features over `n_pairs` random unit-vector pairs.
///
/// Each ratio is `sqrt(2 K(1) - 2 K(u)) / |x - y|` with `K` the
/// activation's two-layer tangent kernel from Gauss-Hermite quadrature.
/// For twice-differentiable activations the result stays below
/// [`crate::activation::smooth_lipschitz_bound`] of the dual moments —
/// in contrast to the ReLU ratio probed by [`ntk_nonlip_ratio`], which is
/// unbounded.
pub fn smooth_activation_lip_check(
    activation: &dyn Activation,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument { context: "lipschitz sweep needs at least one pair" });
    }
    let rule = QuadratureRule::gauss_hermite(LIP_CHECK_NODES)?;
    let k_self = kernel_from_rule(activation, 1.0, &rule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0_f64;
    for _ in 0..n_pairs {
        let x = random_unit(&mut rng, LIP_CHECK_DIM);
        let y = random_unit(&mut rng, LIP_CHECK_DIM);
        let ratio = feature_ratio_from_rule(activation, &rule, k_self, &x, &y)?;
        if !ratio.is_finite() {
            return Err(Error::NonFinite { context: "lipschitz sweep ratio" });
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(max_ratio)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm_slice(&v);
        if n > 1e-6 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{dual_gamma, smooth_lipschitz_bound, ExpShifted, Softplus};
    use crate::arccos::{kappa0, kappa1};
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use rand::Rng;

    fn random_vector(rng: &mut ChaCha8Rng, dim: usize, norm_range: (f64, f64)) -> Vec<f64> {
        let target: f64 = rng.gen_range(norm_range.0..norm_range.1);
        let v = random_unit(rng, dim);
        v.into_iter().map(|a| a * target).collect()
    }

    fn random_signal(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageSignal {
        let data: Vec<f64> = (0..h * w * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        ImageSignal::new(h, w, c, data).unwrap()
    }

    #[test]
    fn phi0_ratio_matches_closed_form_anchors() {
        assert_abs_diff_eq!(phi0_holder_ratio(-1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            phi0_holder_ratio(0.0).unwrap(),
            core::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        // arccos(u) ~ sqrt(2(1-u)) near 1 drives the ratio to 2/pi.
        let near = phi0_holder_ratio(1.0 - 1e-6).unwrap();
        assert!((near - 2.0 / PI).abs() / (2.0 / PI) < 0.01, "ratio {near} not within 1% of 2/pi");
        // Measured limit at the closest probed cosine: 2/pi, not any
        // smaller constant.
        let limit = phi0_holder_ratio(PROBE_CLOSEST_APPROACH).unwrap();
        assert!((limit - 2.0 / PI).abs() < 1e-4, "u -> 1 limit measured at {limit}");
        assert!(phi0_holder_ratio(1.0).is_err());
        assert!(phi0_holder_ratio(1.1).is_err());
    }

    #[test]
    fn ntk_ratio_blows_up_approaching_parallel() {
        assert_abs_diff_eq!(ntk_nonlip_ratio(-1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(ntk_nonlip_ratio(1.0 - 1e-8).unwrap() > 1e3);
        let near = ntk_nonlip_ratio(1.0 - 1e-8).unwrap();
        let mid = ntk_nonlip_ratio(1.0 - 1e-4).unwrap();
        let far = ntk_nonlip_ratio(0.0).unwrap();
        assert!(near > mid && mid > far, "ratio must grow toward cosine 1");
        assert!(ntk_nonlip_ratio(1.0).is_err());
    }

    #[test]
    fn probe_grid_covers_both_regimes() {
        let grid = ratio_probe_grid();
        assert!(grid.windows(2).all(|w| w[0] < w[1]), "grid sorted strictly ascending");
        assert_eq!(grid.first().copied(), Some(-1.0));
        assert_eq!(grid.last().copied(), Some(PROBE_CLOSEST_APPROACH));
        for j in 0..=12 {
            let u = 1.0 - libm::pow(10.0, -(j as f64));
            assert!(grid.contains(&u), "log-approach point {u} missing");
        }
    }

    #[test]
    fn phi0_ratio_bounded_by_one_over_probe_grid() {
        let probe = ratio_probe(RatioKind::Phi0Holder).unwrap();
        assert!(probe.values().iter().all(|v| v.is_finite()));
        assert!(probe.sup() <= 1.0 + 1e-9, "sup {} exceeds the Holder bound", probe.sup());
        let max = probe.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(probe.sup(), max);
    }

    #[test]
    fn ntk_ratio_exceeds_every_threshold_on_probe_grid() {
        let probe = ratio_probe(RatioKind::NtkNonLip).unwrap();
        assert!(probe.values().iter().all(|v| v.is_finite()));
        for threshold in [10.0, 100.0, 1000.0] {
            assert!(
                probe.values().iter().any(|&v| v > threshold),
                "no probe point above {threshold}"
            );
        }
    }

    #[test]
    fn relu_carried_factor_is_kernel_level_one_lipschitz() {
        // 2 - 2 kappa1(u) <= 2 - 2u, i.e. kappa1(u) >= u, with equality
        // only at u = 1.
        for &u in &ratio_probe_grid() {
            let feature_sq = 2.0 - 2.0 * kappa1(u).unwrap();
            let input_sq = 2.0 - 2.0 * u;
            assert!(
                feature_sq <= input_sq + 1e-15,
                "kappa1 fails 1-Lipschitzness at u = {u}: {feature_sq} > {input_sq}"
            );
        }
        assert_abs_diff_eq!(2.0 - 2.0 * kappa1(1.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn holder_bound_anchors() {
        let x = [0.3, -1.2, 0.7];
        let (lhs, rhs) = holder_bound_check(&x, &x).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);

        // Unit orthogonal pair: lhs = sqrt(4 - 2/pi), rhs = sqrt(sqrt(2))
        // + 2 sqrt(2).
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let (lhs, rhs) = holder_bound_check(&e1, &e2).unwrap();
        assert_abs_diff_eq!(lhs, libm::sqrt(4.0 - 2.0 / PI), epsilon = 1e-12);
        assert_abs_diff_eq!(rhs, libm::sqrt(libm::sqrt(2.0)) + 2.0 * libm::sqrt(2.0), epsilon = 1e-12);
        assert!(lhs <= rhs + 1e-10);

        assert!(holder_bound_check(&[0.0, 0.0], &e1).is_err());
    }

    #[test]
    fn holder_bound_holds_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0516);
        let mut worst_gap = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = random_vector(&mut rng, 20, (0.1, 10.0));
            let y = random_vector(&mut rng, 20, (0.1, 10.0));
            let (lhs, rhs) = holder_bound_check(&x, &y).unwrap();
            worst_gap = worst_gap.max(lhs - rhs);
        }
        assert!(worst_gap <= 1e-10, "holder bound violated by {worst_gap}");
    }

    #[test]
    fn m_smoothness_trivial_and_zero_carried_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0517);
        let x = random_signal(&mut rng, 4, 4, 3);
        let y = random_signal(&mut rng, 4, 4, 2);
        let (lhs, rhs) = m_smoothness_check(&x, &y, &x, &y).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);

        // Zero carried signals reduce the operator distance to the
        // kappa1 feature distance, which is 1-Lipschitz in the input.
        let zero = ImageSignal::new(4, 4, 2, alloc::vec![0.0; 32]).unwrap();
        for _ in 0..200 {
            let a = random_signal(&mut rng, 4, 4, 3);
            let b = random_signal(&mut rng, 4, 4, 3);
            let (lhs, _) = m_smoothness_check(&a, &zero, &b, &zero).unwrap();
            let input_dist = euclidean_distance(a.data(), b.data()).unwrap();
            assert!(
                lhs <= input_dist + 1e-10,
                "zero-carried distance {lhs} exceeds input distance {input_dist}"
            );
        }
    }

    #[test]
    fn m_smoothness_bound_holds_over_random_quadruples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0518);
        let mut worst_gap = f64::NEG_INFINITY;
        for _ in 0..1_000 {
            let x = random_signal(&mut rng, 4, 4, 3);
            let y = random_signal(&mut rng, 4, 4, 2);
            let xp = random_signal(&mut rng, 4, 4, 3);
            let yp = random_signal(&mut rng, 4, 4, 2);
            let (lhs, rhs) = m_smoothness_check(&x, &y, &xp, &yp).unwrap();
            worst_gap = worst_gap.max(lhs - rhs);
        }
        assert!(worst_gap <= 1e-10, "operator bound violated by {worst_gap}");

        let tall = random_signal(&mut rng, 5, 4, 3);
        let y = random_signal(&mut rng, 4, 4, 2);
        assert!(m_smoothness_check(&tall, &y, &tall, &y).is_err());
    }

    #[test]
    fn kernel_is_one_homogeneous_in_each_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0519);
        let x = random_unit(&mut rng, 6);
        let y = random_unit(&mut rng, 6);
        assert_eq!(homogeneity_check(&x, &y, 1.0, 1.0).unwrap(), 0.0);
        assert!(homogeneity_check(&x, &y, 2.0, 3.0).unwrap() < 1e-12);
        // Extreme scale separation only touches the norm prefactor.
        assert!(homogeneity_check(&x, &y, 1e-3, 7.0).unwrap() < 1e-10);
        assert!(homogeneity_check(&x, &y, 0.0, 1.0).is_err());
        assert!(homogeneity_check(&x, &y, 1.0, -2.0).is_err());
        // kappa vanishes at cosine -1, so antipodal pairs have no scale
        // to compare against.
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(matches!(
            homogeneity_check(&x, &neg, 2.0, 2.0),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn exp_activation_ratio_stays_below_sqrt_three() {
        // All dual moments of exp(u - 1) are 1, so the bound is
        // sqrt(2 max(1, 3/2)) = sqrt(3).
        let max_ratio = smooth_activation_lip_check(&ExpShifted, 1_000, 0x051A).unwrap();
        assert!(
            max_ratio <= libm::sqrt(3.0) + 1e-4,
            "exp-shifted ratio {max_ratio} exceeds sqrt(3)"
        );
        assert!(max_ratio > 1.0, "sweep should find ratios above 1, got {max_ratio}");
    }

    #[test]
    fn softplus_ratio_stays_below_quadrature_bound() {
        let g0 = dual_gamma(&Softplus, 0, 256).unwrap();
        let g1 = dual_gamma(&Softplus, 1, 256).unwrap();
        let g2 = dual_gamma(&Softplus, 2, 256).unwrap();
        let bound = smooth_lipschitz_bound(g0, g1, g2).unwrap();
        let max_ratio = smooth_activation_lip_check(&Softplus, 1_000, 0x051B).unwrap();
        assert!(
            max_ratio <= bound + 1e-4,
            "softplus ratio {max_ratio} exceeds bound {bound}"
        );
    }

    #[test]
    fn smooth_ratio_is_finite_for_nearly_identical_pairs() {
        // Unlike the ReLU tangent features, a smooth activation keeps the
        // ratio finite as the pair collapses.
        let rule = QuadratureRule::gauss_hermite(LIP_CHECK_NODES).unwrap();
        let k_self = kernel_from_rule(&ExpShifted, 1.0, &rule).unwrap();
        let eps = 1e-6;
        let x = [1.0, 0.0];
        let y = [libm::sqrt(1.0 - eps * eps), eps];
        let ratio = feature_ratio_from_rule(&ExpShifted, &rule, k_self, &x, &y).unwrap();
        assert!(ratio.is_finite());
        assert!(ratio <= libm::sqrt(3.0) + 1e-4, "collapsing-pair ratio {ratio} blew up");
        // The same geometry through the ReLU tangent kernel is far above
        // the smooth bound by this separation.
        let u = 1.0 - eps * eps / 2.0;
        assert!(ntk_nonlip_ratio(u).unwrap() > 100.0);
        assert!(smooth_activation_lip_check(&ExpShifted, 0, 1).is_err());
    }

    #[test]
    fn kappa0_holder_exponent_is_sharp() {
        // The ratio against a slightly stronger exponent
        // (2 - 2 kappa0) / (2 - 2u)^(1/2 + delta) diverges, so 1/2 is the
        // true Holder exponent of the direction features.
        let delta = 0.25;
        let mut previous = 0.0;
        for j in [4, 6, 8, 10] {
            let u = 1.0 - libm::pow(10.0, -(j as f64));
            let stronger =
                (2.0 - 2.0 * kappa0(u).unwrap()) / libm::pow(2.0 - 2.0 * u, 0.5 + delta);
            assert!(stronger > previous, "stronger-exponent ratio must diverge");
            previous = stronger;
        }
        assert!(previous > 10.0);
    }
}
