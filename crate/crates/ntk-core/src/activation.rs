//! Activations, their Gaussian dual moments, and the generic two-layer
//! kernel for arbitrary (weakly) differentiable activations.
//!
//! For an activation `sigma` the quantities computed here are
//!
//! - `gamma_j = E[(sigma^(j)(u))^2]` under `u ~ N(0,1)` ([`dual_gamma`]),
//! - `K_sigma(x, y) = <x,y> E[sigma'(w.x) sigma'(w.y)] + E[sigma(w.x) sigma(w.y)]`
//!   on unit vectors, `w ~ N(0, I)` ([`generic_two_layer_ntk`]), and
//! - the Lipschitz constant `sqrt((g0+g1) max(1, (2 g1 + g2)/(g0+g1)))` of
//!   the induced kernel mapping for twice-differentiable activations
//!   ([`smooth_lipschitz_bound`]).
//!
//! All expectations are Gauss-Hermite quadratures; a rotation reduces the
//! two-vector expectation to the plane spanned by the inputs, so a tensor
//! rule over two standard normals suffices.

use crate::arccos::{checked_dot, clamp_cosine, norm};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// An activation together with the derivatives it can evaluate.
///
/// `derivative(0, u)` is the value itself. Orders above
/// `max_derivative_order` return `None`; ReLU stops at 1 (its second
/// derivative is not square-integrable against the Gaussian).
pub trait Activation {
    fn name(&self) -> &'static str;
    fn max_derivative_order(&self) -> usize;
    fn derivative(&self, order: usize, u: f64) -> Option<f64>;
}

/// `max(u, 0)`, with the subgradient at 0 taken as 0 (a probability-zero
/// event under Gaussian inputs).
#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl Activation for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn max_derivative_order(&self) -> usize {
        1
    }

    fn derivative(&self, order: usize, u: f64) -> Option<f64> {
        match order {
            0 => Some(if u > 0.0 { u } else { 0.0 }),
            1 => Some(if u > 0.0 { 1.0 } else { 0.0 }),
            _ => None,
        }
    }
}

/// `exp(u - 1)`: every derivative equals the function, so all dual moments
/// are `E[exp(2u - 2)] = 1`.
#[derive(Debug, Clone, Copy)]
pub struct ExpShifted;

impl Activation for ExpShifted {
    fn name(&self) -> &'static str {
        "exp-shifted"
    }

    fn max_derivative_order(&self) -> usize {
        usize::MAX
    }

    fn derivative(&self, _order: usize, u: f64) -> Option<f64> {
        Some(libm::exp(u - 1.0))
    }
}

/// `log(1 + exp(u))` with the numerically stable split for large `|u|`.
#[derive(Debug, Clone, Copy)]
pub struct Softplus;

impl Activation for Softplus {
    fn name(&self) -> &'static str {
        "softplus"
    }

    fn max_derivative_order(&self) -> usize {
        2
    }

    fn derivative(&self, order: usize, u: f64) -> Option<f64> {
        match order {
            0 => Some(if u > 0.0 {
                u + libm::log1p(libm::exp(-u))
            } else {
                libm::log1p(libm::exp(u))
            }),
            1 => Some(1.0 / (1.0 + libm::exp(-u))),
            2 => {
                let s = 1.0 / (1.0 + libm::exp(-u));
                Some(s * (1.0 - s))
            }
            _ => None,
        }
    }
}

/// Relative agreement required between a Gauss-Hermite estimate and its
/// node-doubled refinement in [`dual_gamma`]. Smooth activations converge
/// far below this; failing it means the integrand is not quadrature-friendly.
pub const DUAL_GAMMA_DOUBLING_TOL: f64 = 1e-8;

/// Gaussian dual moment `gamma_j = E[(sigma^(j)(u))^2]`.
///
/// Uses probabilists' Gauss-Hermite with `nodes` points (rounded up to an
/// even count so no node falls on the ReLU kink at 0) and verifies
/// convergence by doubling the count. For ReLU the even/odd split makes the
/// rule exact: the even parts of `relu(u)^2` and `1{u>0}` are `u^2/2` and
/// `1/2`, and symmetric rules annihilate the odd parts.
pub fn dual_gamma(activation: &dyn Activation, order: usize, nodes: usize) -> Result<f64> {
    if nodes < 64 {
        return Err(Error::InvalidArgument { context: "dual moment needs at least 64 nodes" });
    }
    if order > activation.max_derivative_order() {
        return Err(Error::Unsupported { context: "activation derivative order unavailable" });
    }
    let n = nodes + (nodes & 1);
    let coarse = gamma_estimate(activation, order, n)?;
    let fine = gamma_estimate(activation, order, 2 * n)?;
    if (fine - coarse).abs() > DUAL_GAMMA_DOUBLING_TOL * fine.abs().max(1e-300) {
        return Err(Error::NumericFailure { context: "dual moment quadrature did not converge" });
    }
    Ok(fine)
}

fn gamma_estimate(activation: &dyn Activation, order: usize, nodes: usize) -> Result<f64> {
    let rule = QuadratureRule::gauss_hermite(nodes)?;
    let mut acc = 0.0;
    for (&u, &w) in rule.nodes().iter().zip(rule.weights()) {
        let v = activation
            .derivative(order, u)
            .ok_or(Error::Unsupported { context: "activation derivative order unavailable" })?;
        acc += w * v * v;
    }
    if !acc.is_finite() {
        return Err(Error::NumericFailure { context: "dual moment integrand overflowed" });
    }
    Ok(acc)
}

/// Lipschitz constant of the kernel mapping of a twice-differentiable
/// activation: `sqrt((g0 + g1) max(1, (2 g1 + g2) / (g0 + g1)))`.
pub fn smooth_lipschitz_bound(gamma0: f64, gamma1: f64, gamma2: f64) -> Result<f64> {
    for g in [gamma0, gamma1, gamma2] {
        if !g.is_finite() {
            return Err(Error::NonFinite { context: "dual moment" });
        }
        if g < 0.0 {
            return Err(Error::NegativeValue { context: "dual moment", value: g });
        }
    }
    if gamma0 <= 0.0 {
        return Err(Error::InvalidArgument { context: "gamma0 must be positive" });
    }
    let base = gamma0 + gamma1;
    let ratio = (2.0 * gamma1 + gamma2) / base;
    Ok(libm::sqrt(base * ratio.max(1.0)))
}

/// Expectation `E[sigma^(order)(z) sigma^(order)(u z + sqrt(1-u^2) z')]`
/// over independent standard normals `z, z'`, by a tensor Gauss-Hermite
/// rule. This is the Gaussian expectation over any pair of unit vectors
/// with cosine `u`, reduced to their span by rotation invariance.
pub fn pair_expectation(
    activation: &dyn Activation,
    order: usize,
    u: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    if order > activation.max_derivative_order() {
        return Err(Error::Unsupported { context: "activation derivative order unavailable" });
    }
    let u = clamp_cosine(u)?;
    let root = libm::sqrt(((1.0 - u) * (1.0 + u)).max(0.0));
    let nodes = rule.nodes();
    let weights = rule.weights();
    // Evaluate sigma^(order) once per node for the first factor.
    let mut acc = 0.0;
    for (i, &zi) in nodes.iter().enumerate() {
        let gi = activation.derivative(order, zi).unwrap_or(f64::NAN);
        let mut inner = 0.0;
        for (j, &zj) in nodes.iter().enumerate() {
            let arg = u * zi + root * zj;
            let gj = activation.derivative(order, arg).unwrap_or(f64::NAN);
            inner += weights[j] * gj;
        }
        acc += weights[i] * gi * inner;
    }
    if !acc.is_finite() {
        return Err(Error::NumericFailure { context: "pair expectation overflowed" });
    }
    Ok(acc)
}

/// Default tensor-rule size for [`generic_two_layer_ntk`]; the convergence
/// check doubles it.
pub const PAIR_RULE_NODES: usize = 160;

/// Relative doubling tolerance of the generic kernel. Deliberately loose:
/// activations with kinks (ReLU) converge only algebraically under
/// Gauss-Hermite, at a few times 1e-5 between 160 and 320 nodes; smooth
/// activations converge to machine precision. Beyond this threshold the
/// integrand is considered non-integrable by this method.
pub const PAIR_DOUBLING_TOL: f64 = 1e-2;

/// Two-layer kernel of an arbitrary activation on unit vectors:
/// `<x,y> E[sigma' sigma'] + E[sigma sigma]`.
///
/// No factor 2: with the ReLU activation this equals `kappa(u) / 2` of
/// [`crate::arccos::kappa_ntk`], whose definition absorbs the variance-2
/// weight scaling.
pub fn generic_two_layer_ntk(activation: &dyn Activation, x: &[f64], y: &[f64]) -> Result<f64> {
    let nx = norm(x);
    let ny = norm(y);
    if (nx - 1.0).abs() > 1e-6 || (ny - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument { context: "generic kernel requires unit vectors" });
    }
    let u = clamp_cosine(checked_dot(x, y, "generic kernel inputs")? / (nx * ny))?;
    let coarse_rule = QuadratureRule::gauss_hermite(PAIR_RULE_NODES)?;
    let fine_rule = QuadratureRule::gauss_hermite(2 * PAIR_RULE_NODES)?;
    let coarse = kernel_from_rule(activation, u, &coarse_rule)?;
    let fine = kernel_from_rule(activation, u, &fine_rule)?;
    if (fine - coarse).abs() > PAIR_DOUBLING_TOL * fine.abs().max(1.0) {
        return Err(Error::NumericFailure { context: "generic kernel quadrature did not converge" });
    }
    Ok(fine)
}

pub(crate) fn kernel_from_rule(
    activation: &dyn Activation,
    u: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let derivative_part = pair_expectation(activation, 1, u, rule)?;
    let value_part = pair_expectation(activation, 0, u, rule)?;
    Ok(u * derivative_part + value_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arccos::two_layer_ntk;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_pair(u: f64) -> ([f64; 2], [f64; 2]) {
        ([1.0, 0.0], [u, (1.0 - u * u).max(0.0).sqrt()])
    }

    #[test]
    fn relu_dual_moments_are_one_half() {
        // Even parts of relu^2 and step are u^2/2 and 1/2; symmetric rules
        // integrate them exactly.
        assert_abs_diff_eq!(dual_gamma(&Relu, 0, 256).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(dual_gamma(&Relu, 1, 256).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(dual_gamma(&Relu, 2, 256), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn exp_shifted_dual_moments_are_one() {
        for order in 0..3 {
            assert_abs_diff_eq!(dual_gamma(&ExpShifted, order, 256).unwrap(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn softplus_dual_moments_match_monte_carlo() {
        // Independent oracle: plain Monte Carlo over 2e6 Gaussian samples.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2_000_000usize;
        let mut mc = [0.0f64; 3];
        for _ in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            for (j, acc) in mc.iter_mut().enumerate() {
                let v = Softplus.derivative(j, u).unwrap();
                *acc += v * v;
            }
        }
        for (j, acc) in mc.iter().enumerate() {
            let estimate = acc / n as f64;
            let quad = dual_gamma(&Softplus, j, 256).unwrap();
            // 3 sigma of the MC mean is well under 0.5% for these moments.
            assert_abs_diff_eq!(quad, estimate, epsilon = 5e-3 * quad.max(0.05));
        }
    }

    #[test]
    fn lipschitz_bound_closed_forms() {
        assert_abs_diff_eq!(smooth_lipschitz_bound(1.0, 1.0, 1.0).unwrap(), 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_lipschitz_bound(1.0, 0.0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        // Softplus triple: the ratio term is below 1, so the bound is
        // sqrt(g0 + g1).
        assert_abs_diff_eq!(
            smooth_lipschitz_bound(2.31, 0.74, 0.11).unwrap(),
            3.05f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(matches!(
            smooth_lipschitz_bound(0.0, 1.0, 1.0),
            Err(Error::InvalidArgument { .. })
        ));
        assert!(matches!(
            smooth_lipschitz_bound(1.0, -0.1, 0.0),
            Err(Error::NegativeValue { .. })
        ));
    }

    #[test]
    fn exp_shifted_kernel_matches_closed_form() {
        // K(u) = (1 + u) exp(u - 1): both expectations are exp(u - 1) by
        // the Gaussian moment generating function.
        for &u in &[-1.0, -0.3, 0.0, 0.5, 0.9, 1.0] {
            let (x, y) = unit_pair(u);
            let k = generic_two_layer_ntk(&ExpShifted, &x, &y).unwrap();
            assert_abs_diff_eq!(k, (1.0 + u) * (u - 1.0).exp(), epsilon = 1e-10);
        }
        let (x, _) = unit_pair(0.0);
        assert_abs_diff_eq!(generic_two_layer_ntk(&ExpShifted, &x, &x).unwrap(), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn relu_kernel_special_angles() {
        let (x, y) = unit_pair(0.0);
        // Orthogonal: E[step step] = 1/4 exactly by separability;
        // E[relu relu] = E[relu]^2 = 1/(2 pi) converges only at O(1/n)
        // because of the kink (measured 4e-4 at 320 nodes).
        assert_abs_diff_eq!(
            generic_two_layer_ntk(&Relu, &x, &y).unwrap(),
            1.0 / (2.0 * PI),
            epsilon = 1e-3
        );
        // Aligned inputs: both expectations are exact under even symmetric
        // rules (even parts are u^2/2 and 1/2).
        assert_abs_diff_eq!(generic_two_layer_ntk(&Relu, &x, &x).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn doubled_relu_kernel_tracks_the_closed_form() {
        for &u in &[-0.9, -0.5, -0.1, 0.2, 0.6, 0.95] {
            let (x, y) = unit_pair(u);
            let generic = generic_two_layer_ntk(&Relu, &x, &y).unwrap();
            let exact = two_layer_ntk(&x, &y).unwrap();
            // The step-product integrand is discontinuous across a rotated
            // line, which tensor Gauss-Hermite resolves slowly; the
            // measured envelope at 320 nodes peaks at ~1e-2 near u = 0.95.
            assert_abs_diff_eq!(2.0 * generic, exact, epsilon = 1.5e-2);
        }
    }

    #[test]
    fn non_unit_inputs_are_rejected() {
        assert!(matches!(
            generic_two_layer_ntk(&Relu, &[2.0, 0.0], &[1.0, 0.0]),
            Err(Error::InvalidArgument { .. })
        ));
    }
}
