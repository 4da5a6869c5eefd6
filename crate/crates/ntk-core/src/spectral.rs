//! Mercer decomposition of dot-product kernels on the unit sphere of
//! `R^p`: multiplicities of harmonic spaces, Legendre (Gegenbauer)
//! polynomials normalized to `P_k(1) = 1`, and Funk-Hecke coefficients
//!
//! `mu_k = (omega_{p-2} / omega_{p-1}) int_{-1}^{1} f(t) P_k(t) (1 - t^2)^{(p-3)/2} dt`
//!
//! computed by Gauss-Jacobi quadrature with node-doubling verification.

use alloc::vec;
use alloc::vec::Vec;

use crate::arccos::{kappa0_clamped, kappa1_clamped};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Relative node-doubling tolerance for Funk-Hecke coefficients.
pub const MU_DOUBLING_REL_TOL: f64 = 1e-7;
/// Absolute node-doubling floor (coefficients that vanish identically
/// oscillate at rounding level).
pub const MU_DOUBLING_ABS_TOL: f64 = 1e-14;
/// Scale-anchored node-doubling tolerance, relative to the L1 magnitude of
/// the profile under the spherical weight. Profiles with arcsin-type
/// endpoint behavior (kappa0, and through it the tangent-kernel profile)
/// carry a k-independent doubling residual of about `1e-9` per unit of
/// profile magnitude at the minimum node count; their true doubled-rule
/// error is an order of magnitude smaller, so a plain relative criterion
/// would spuriously reject every small-but-nonzero coefficient.
pub const MU_DOUBLING_SCALE_TOL: f64 = 1e-8;

/// Surface area of the unit sphere `S^{d-1}` in ambient dimension `d`:
/// `2 pi^{d/2} / Gamma(d/2)`.
pub fn surface_area(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidArgument { context: "ambient dimension must be at least 1" });
    }
    let half = d as f64 / 2.0;
    Ok(2.0 * libm::pow(core::f64::consts::PI, half) / libm::tgamma(half))
}

fn binomial_u128(n: u128, r: u128) -> Result<u128> {
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 1..=r {
        // Multiply before dividing; every prefix is itself a binomial
        // coefficient, so the division is exact.
        acc = acc
            .checked_mul(n - r + i)
            .ok_or(Error::NumericFailure { context: "binomial coefficient overflows u128" })?;
        acc /= i;
    }
    Ok(acc)
}

/// Dimension of the space of degree-`k` spherical harmonics on `S^{p-1}`:
/// `N(p, k) = C(p+k-1, k) - C(p+k-3, k-2)`, with `N(p, 0) = 1`.
pub fn harmonic_dim(p: usize, k: usize) -> Result<u128> {
    if p < 2 {
        return Err(Error::InvalidArgument { context: "harmonic dimension needs p >= 2" });
    }
    let (p, k) = (p as u128, k as u128);
    if k == 0 {
        return Ok(1);
    }
    let lead = binomial_u128(p + k - 1, k)?;
    let sub = if k >= 2 { binomial_u128(p + k - 3, k - 2)? } else { 0 };
    Ok(lead - sub)
}

/// Degree-`k` Legendre polynomial in dimension `p` (the Gegenbauer
/// polynomial normalized to `P_k(1) = 1`), by the upward recurrence
/// `P_{k+1}(t) = ((2k+p-2) t P_k(t) - k P_{k-1}(t)) / (k+p-2)`.
pub fn legendre(p: usize, k: usize, t: f64) -> Result<f64> {
    Ok(legendre_batch(p, k, t)?[k])
}

/// All values `P_0(t) ..= P_{k_max}(t)` from one pass of the recurrence.
pub fn legendre_batch(p: usize, k_max: usize, t: f64) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::InvalidArgument { context: "legendre polynomials need p >= 2" });
    }
    if t.is_nan() || t.abs() > 1.0 + 1e-9 {
        return Err(Error::CosineOutOfRange { value: t });
    }
    let t = t.clamp(-1.0, 1.0);
    let mut out = vec![0.0; k_max + 1];
    out[0] = 1.0;
    if k_max == 0 {
        return Ok(out);
    }
    out[1] = t;
    for k in 1..k_max {
        let kf = k as f64;
        let pf = p as f64;
        out[k + 1] = ((2.0 * kf + pf - 2.0) * t * out[k] - kf * out[k - 1]) / (kf + pf - 2.0);
    }
    Ok(out)
}

/// Gauss-Jacobi rule for the spherical weight `(1 - t^2)^{(p-3)/2}`, held
/// together with its node-doubled refinement for convergence checks.
#[derive(Debug, Clone)]
pub struct JacobiQuadrature {
    p: usize,
    base: QuadratureRule,
    doubled: QuadratureRule,
}

/// Builds the quadrature pair for dimension `p >= 3` (the weight exponent
/// `(p-3)/2` then satisfies the Jacobi constraint `alpha > -1/2`).
pub fn jacobi_rule(p: usize, node_count: usize) -> Result<JacobiQuadrature> {
    if p < 3 {
        return Err(Error::InvalidArgument { context: "spherical quadrature needs p >= 3" });
    }
    if node_count < 8 {
        return Err(Error::InvalidArgument { context: "spherical quadrature needs at least 8 nodes" });
    }
    let alpha = (p as f64 - 3.0) / 2.0;
    Ok(JacobiQuadrature {
        p,
        base: QuadratureRule::gauss_jacobi_symmetric(node_count, alpha)?,
        doubled: QuadratureRule::gauss_jacobi_symmetric(2 * node_count, alpha)?,
    })
}

impl JacobiQuadrature {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn node_count(&self) -> usize {
        self.base.len()
    }

    pub fn nodes(&self) -> &[f64] {
        self.base.nodes()
    }

    pub fn weights(&self) -> &[f64] {
        self.base.weights()
    }

    /// Total weight mass, equal to `omega_{p-1} / omega_{p-2}`.
    pub fn total_mass(&self) -> f64 {
        self.base.total_mass()
    }
}

/// Minimum node count accepted for a degree-`k` coefficient.
pub fn required_nodes(k: usize) -> usize {
    (4 * k + 64).max(512)
}

fn mu_estimate(f: &impl Fn(f64) -> f64, p: usize, k: usize, rule: &QuadratureRule) -> Result<(f64, f64)> {
    let factor = surface_area(p - 1)? / surface_area(p)?;
    let mut acc = 0.0;
    let mut mass = 0.0;
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let fv = f(t);
        acc += w * fv * legendre(p, k, t)?;
        mass += w * fv.abs();
    }
    Ok((factor * acc, factor * mass))
}

fn doubling_converged(coarse: f64, fine: f64, scale: f64) -> bool {
    let diff = (fine - coarse).abs();
    diff < MU_DOUBLING_REL_TOL * fine.abs()
        || diff < MU_DOUBLING_ABS_TOL
        || diff < MU_DOUBLING_SCALE_TOL * scale
}

/// Funk-Hecke coefficient of a dot-product kernel profile `f`, verified by
/// node doubling: the doubled-rule estimate is accepted when the change is
/// below [`MU_DOUBLING_REL_TOL`] relatively, [`MU_DOUBLING_ABS_TOL`]
/// absolutely, or [`MU_DOUBLING_SCALE_TOL`] times the profile's weighted
/// L1 magnitude.
pub fn mu_k(f: impl Fn(f64) -> f64, p: usize, k: usize, rule: &JacobiQuadrature) -> Result<f64> {
    if rule.node_count() < required_nodes(k) {
        return Err(Error::InvalidArgument { context: "quadrature rule has too few nodes for this degree" });
    }
    let (coarse, _) = mu_estimate(&f, p, k, &rule.base)?;
    let (fine, scale) = mu_estimate(&f, p, k, &rule.doubled)?;
    if doubling_converged(coarse, fine, scale) {
        Ok(fine)
    } else {
        Err(Error::NotConverged { context: "Funk-Hecke coefficient", coarse, fine })
    }
}

/// Relative error between the quadrature of `int P_k^2 (1-t^2)^{(p-3)/2}`
/// and its closed form `(omega_{p-1}/omega_{p-2}) / N(p, k)`.
pub fn legendre_norm_check(p: usize, k: usize, rule: &JacobiQuadrature) -> Result<f64> {
    let mut acc = 0.0;
    for (&t, &w) in rule.doubled.nodes().iter().zip(rule.doubled.weights()) {
        let pk = legendre(p, k, t)?;
        acc += w * pk * pk;
    }
    let closed = (surface_area(p)? / surface_area(p - 1)?) / harmonic_dim(p, k)? as f64;
    Ok((acc - closed).abs() / closed)
}

/// One row of a kernel spectrum: degree, coefficient, multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub k: usize,
    pub mu: f64,
    pub multiplicity: u128,
}

/// Funk-Hecke spectrum of a dot-product kernel profile up to a maximum
/// degree, with one shared quadrature pair across all degrees.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    p: usize,
    rows: Vec<SpectrumRow>,
}

impl SpectrumTable {
    /// Computes all coefficients `mu_0 ..= mu_{k_max}` on a fresh rule
    /// sized for the largest degree. Every coefficient individually passes
    /// the doubling check.
    pub fn compute(f: impl Fn(f64) -> f64, p: usize, k_max: usize) -> Result<Self> {
        let rule = jacobi_rule(p, required_nodes(k_max))?;
        Self::compute_with_rule(f, p, k_max, &rule)
    }

    /// As [`SpectrumTable::compute`] but on a caller-provided rule, so
    /// several profiles can share one node set. Sharing nodes makes
    /// linear-in-the-profile identities between spectra (such as the
    /// tangent-kernel recurrence) hold to rounding rather than to
    /// quadrature error.
    pub fn compute_with_rule(
        f: impl Fn(f64) -> f64,
        p: usize,
        k_max: usize,
        rule: &JacobiQuadrature,
    ) -> Result<Self> {
        if rule.node_count() < required_nodes(k_max) {
            return Err(Error::InvalidArgument { context: "quadrature rule has too few nodes for this degree" });
        }
        if rule.p != p {
            return Err(Error::ShapeMismatch { context: "quadrature rule dimension" });
        }
        let factor = surface_area(p - 1)? / surface_area(p)?;
        let (coarse, _) = Self::accumulate(&f, p, k_max, &rule.base)?;
        let (fine, mass) = Self::accumulate(&f, p, k_max, &rule.doubled)?;
        let scale = factor * mass;
        let mut rows = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let (c, fv) = (factor * coarse[k], factor * fine[k]);
            if !doubling_converged(c, fv, scale) {
                return Err(Error::NotConverged {
                    context: "spectrum coefficient",
                    coarse: c,
                    fine: fv,
                });
            }
            rows.push(SpectrumRow { k, mu: fv, multiplicity: harmonic_dim(p, k)? });
        }
        Ok(SpectrumTable { p, rows })
    }

    /// Per-node Legendre recurrence accumulated into per-degree sums,
    /// together with the weighted L1 mass of the profile.
    fn accumulate(
        f: &impl Fn(f64) -> f64,
        p: usize,
        k_max: usize,
        rule: &QuadratureRule,
    ) -> Result<(Vec<f64>, f64)> {
        let mut sums = vec![0.0; k_max + 1];
        let mut mass = 0.0;
        for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
            let fv = f(t);
            let wf = w * fv;
            mass += w * fv.abs();
            let pk = legendre_batch(p, k_max, t)?;
            for (s, v) in sums.iter_mut().zip(&pk) {
                *s += wf * v;
            }
        }
        Ok((sums, mass))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> &[SpectrumRow] {
        &self.rows
    }

    /// Partial sums `sum_{k <= K} mu_k N(p, k)`, which approach the kernel
    /// value at coincident points `f(1)` from below for a PSD profile.
    pub fn trace_partial_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.rows
            .iter()
            .map(|r| {
                acc += r.mu * r.multiplicity as f64;
                acc
            })
            .collect()
    }
}

/// Degree-parity filter for decay fits; never inferred from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    All,
}

impl Parity {
    fn admits(&self, k: usize) -> bool {
        match self {
            Parity::Even => k % 2 == 0,
            Parity::Odd => k % 2 == 1,
            Parity::All => true,
        }
    }
}

/// Least-squares slope of `log mu_k` against `log k` over the rows with
/// `k_min <= k <= k_max`, the requested parity, and strictly positive
/// coefficient. Requires at least five usable rows.
///
/// "Strictly positive" means above a noise floor of `1e-12` times the
/// largest coefficient: degrees that vanish analytically come out of the
/// symmetric quadrature at `~1e-15` with random sign, and fitting those
/// would produce a meaningless slope instead of the insufficient-data
/// error the caller should see.
pub fn decay_fit(table: &SpectrumTable, k_min: usize, k_max: usize, parity: Parity) -> Result<f64> {
    let peak = table.rows().iter().fold(0.0f64, |m, r| m.max(r.mu.abs()));
    let floor = 1e-12 * peak;
    let pts: Vec<(f64, f64)> = table
        .rows()
        .iter()
        .filter(|r| r.k >= k_min.max(1) && r.k <= k_max && parity.admits(r.k) && r.mu > floor)
        .map(|r| (libm::log(r.k as f64), libm::log(r.mu)))
        .collect();
    if pts.len() < 5 {
        return Err(Error::DegenerateInput {
            context: "decay fit needs at least five strictly positive coefficients in range",
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// The three angular kernel profiles whose spectra the experiments use.
/// Quadrature nodes lie strictly inside `(-1, 1)`; out-of-range inputs are
/// clamped here because validation happened upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    /// `u kappa0(u) + kappa1(u)`: two-layer tangent kernel profile.
    Ntk,
    /// `kappa1(u)`: fixed-feature (arc-cosine order 1) profile.
    Kappa1,
    /// `kappa0(u)`: arc-cosine order 0 profile.
    Kappa0,
}

impl ProfileKind {
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            ProfileKind::Ntk => t * kappa0_clamped(t) + kappa1_clamped(t),
            ProfileKind::Kappa1 => kappa1_clamped(t),
            ProfileKind::Kappa0 => kappa0_clamped(t),
        }
    }

    /// Kernel value at coincident points, i.e. `f(1)`.
    pub fn at_one(&self) -> f64 {
        match self {
            ProfileKind::Ntk => 2.0,
            ProfileKind::Kappa1 | ProfileKind::Kappa0 => 1.0,
        }
    }
}

/// Maximum relative violation of the tangent-kernel coefficient recurrence
///
/// `mu_k(ntk) = k/(2k+p-2) mu_{k-1}(kappa0) + (k+p-2)/(2k+p-2) mu_{k+1}(kappa0) + mu_k(kappa1)`
///
/// over `0 <= k <= k_max`, with all three spectra computed independently
/// on one shared node set (see [`SpectrumTable::compute_with_rule`]).
/// Relative error uses `max(|lhs|, |rhs|, 1e-6 mu_0)` as denominator so
/// identically vanishing degrees compare at a sensible floor.
pub fn ntk_recurrence_check(p: usize, k_max: usize) -> Result<f64> {
    if k_max < 2 {
        return Err(Error::InvalidArgument { context: "recurrence check needs k_max >= 2" });
    }
    let rule = jacobi_rule(p, required_nodes(k_max + 1))?;
    let ntk = SpectrumTable::compute_with_rule(|t| ProfileKind::Ntk.eval(t), p, k_max, &rule)?;
    let k0 = SpectrumTable::compute_with_rule(|t| ProfileKind::Kappa0.eval(t), p, k_max + 1, &rule)?;
    let k1 = SpectrumTable::compute_with_rule(|t| ProfileKind::Kappa1.eval(t), p, k_max, &rule)?;
    let mu0 = ntk.rows()[0].mu;
    let mut worst = 0.0f64;
    for k in 0..=k_max {
        let kf = k as f64;
        let pf = p as f64;
        let denom_c = 2.0 * kf + pf - 2.0;
        let prev = if k == 0 { 0.0 } else { (kf / denom_c) * k0.rows()[k - 1].mu };
        let next = ((kf + pf - 2.0) / denom_c) * k0.rows()[k + 1].mu;
        let lhs = ntk.rows()[k].mu;
        let rhs = prev + next + k1.rows()[k].mu;
        let denom = lhs.abs().max(rhs.abs()).max(1e-6 * mu0);
        worst = worst.max((lhs - rhs).abs() / denom);
    }
    Ok(worst)
}
