//! Arc-cosine kernel functions and the two-layer ReLU tangent kernel.
//!
//! For `u = cos(angle between x and x')` the three functions are
//!
//! ```text
//! kappa0(u) = (pi - arccos u) / pi
//! kappa1(u) = (u (pi - arccos u) + sqrt(1 - u^2)) / pi
//! kappa(u)  = u kappa0(u) + kappa1(u)
//! ```
//!
//! `kappa0` is twice the Gaussian expectation of the product of ReLU
//! derivatives at correlation `u`, `kappa1` twice the expectation of the
//! product of ReLU values on unit inputs, and `kappa` combines them into
//! the tangent kernel of a two-layer ReLU network of infinite width:
//! `K(x, x') = |x| |x'| kappa(cos)`.

use crate::error::{Error, Result};

/// Norms at or below this threshold are treated as exactly zero; kernels
/// involving such an input evaluate to 0 instead of dividing by the norm.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

/// Rounding slack accepted outside `[-1, 1]` before a cosine argument is
/// rejected. Cosines computed from dot products can overshoot by a few ulp.
pub const COSINE_SLACK: f64 = 1e-9;

/// Clamps a cosine to `[-1, 1]`, rejecting NaN and excursions beyond
/// [`COSINE_SLACK`].
pub fn clamp_cosine(u: f64) -> Result<f64> {
    if u.is_nan() {
        return Err(Error::NonFinite { context: "cosine argument" });
    }
    if u > 1.0 + COSINE_SLACK || u < -1.0 - COSINE_SLACK {
        return Err(Error::CosineOutOfRange { value: u });
    }
    Ok(u.clamp(-1.0, 1.0))
}

/// `(pi - arccos u) / pi`: the zeroth arc-cosine function, increasing from
/// 0 at `u = -1` to 1 at `u = 1`.
pub fn kappa0(u: f64) -> Result<f64> {
    Ok(kappa0_clamped(clamp_cosine(u)?))
}

/// [`kappa0`] for a cosine already clamped to `[-1, 1]`.
pub(crate) fn kappa0_clamped(u: f64) -> f64 {
    (core::f64::consts::PI - libm::acos(u)) / core::f64::consts::PI
}

/// `(u (pi - arccos u) + sqrt(1 - u^2)) / pi`: the first arc-cosine
/// function, increasing from 0 at `u = -1` to 1 at `u = 1`.
pub fn kappa1(u: f64) -> Result<f64> {
    Ok(kappa1_clamped(clamp_cosine(u)?))
}

/// [`kappa1`] for a cosine already clamped to `[-1, 1]`.
pub(crate) fn kappa1_clamped(u: f64) -> f64 {
    let s = libm::sqrt((1.0 - u) * (1.0 + u));
    (u * (core::f64::consts::PI - libm::acos(u)) + s) / core::f64::consts::PI
}

/// `u kappa0(u) + kappa1(u)`: the angular profile of the two-layer ReLU
/// tangent kernel. It runs from 0 at `u = -1` to 2 at `u = 1` but is not
/// monotone: the `u kappa0(u)` term pulls it down to about -0.1368 near
/// `u = -0.794` before it climbs. Positive definiteness holds at the Gram
/// level, not pointwise.
pub fn kappa_ntk(u: f64) -> Result<f64> {
    let u = clamp_cosine(u)?;
    Ok(u * kappa0(u)? + kappa1(u)?)
}

pub(crate) fn checked_dot(x: &[f64], y: &[f64], context: &'static str) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { context });
    }
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite { context });
        }
        acc += a * b;
    }
    Ok(acc)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|a| a * a).sum())
}

/// Cosine of the angle between `x` and `y`, or `None` when either norm is
/// below [`ZERO_NORM_THRESHOLD`].
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    let dot = checked_dot(x, y, "cosine similarity inputs")?;
    let nx = norm(x);
    let ny = norm(y);
    if nx <= ZERO_NORM_THRESHOLD || ny <= ZERO_NORM_THRESHOLD {
        return Ok(None);
    }
    Ok(Some(clamp_cosine(dot / (nx * ny))?))
}

/// Tangent kernel of an infinitely wide two-layer ReLU network:
/// `|x| |y| kappa(cos(x, y))`, with zero-norm inputs mapping to 0.
///
/// Accuracy note: `kappa1` has a square-root cusp at `u = 1`, so for
/// nearly parallel inputs a one-ulp rounding error in the cosine moves the
/// result by order `sqrt(ulp) ~ 1e-8` relative. This conditioning is a
/// property of the kernel itself (the same cusp the smoothness probes
/// measure), not of the implementation.
pub fn two_layer_ntk(x: &[f64], y: &[f64]) -> Result<f64> {
    let dot = checked_dot(x, y, "two-layer kernel inputs")?;
    let nx = norm(x);
    let ny = norm(y);
    if nx <= ZERO_NORM_THRESHOLD || ny <= ZERO_NORM_THRESHOLD {
        return Ok(0.0);
    }
    let u = clamp_cosine(dot / (nx * ny))?;
    Ok(nx * ny * kappa_ntk(u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values_at_special_cosines() {
        assert_abs_diff_eq!(kappa0(1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa0(-1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa0(0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa0(0.5).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        assert_abs_diff_eq!(kappa1(1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa1(-1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa1(0.0).unwrap(), 1.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            kappa1(0.5).unwrap(),
            1.0 / 3.0 + 3f64.sqrt() / (2.0 * PI),
            epsilon = 1e-15
        );

        assert_abs_diff_eq!(kappa_ntk(1.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa_ntk(-1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa_ntk(0.0).unwrap(), 1.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            kappa_ntk(0.5).unwrap(),
            2.0 / 3.0 + 3f64.sqrt() / (2.0 * PI),
            epsilon = 1e-15
        );
    }

    #[test]
    fn two_layer_kernel_on_explicit_vectors() {
        assert_abs_diff_eq!(
            two_layer_ntk(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0 / PI,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(two_layer_ntk(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 2.0, epsilon = 1e-15);
        // Norms factor out: |x| = 2, |y| = 3, orthogonal directions.
        assert_abs_diff_eq!(
            two_layer_ntk(&[2.0, 0.0], &[0.0, 3.0]).unwrap(),
            6.0 / PI,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(two_layer_ntk(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn cosine_clamp_accepts_rounding_but_rejects_garbage() {
        assert_abs_diff_eq!(clamp_cosine(1.0 + 1e-10).unwrap(), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(clamp_cosine(-1.0 - 1e-10).unwrap(), -1.0, epsilon = 0.0);
        assert!(matches!(clamp_cosine(1.0 + 1e-8), Err(Error::CosineOutOfRange { .. })));
        assert!(matches!(clamp_cosine(f64::NAN), Err(Error::NonFinite { .. })));
        assert!(matches!(
            two_layer_ntk(&[1.0, f64::INFINITY], &[1.0, 0.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            two_layer_ntk(&[1.0], &[1.0, 0.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn tangent_profile_dips_negative_for_anti_aligned_inputs() {
        // Minimum of u kappa0(u) + kappa1(u) sits near u = -0.794; the
        // kernel is positive definite but not pointwise nonnegative.
        let dip = kappa_ntk(-0.794).unwrap();
        assert!(dip < -0.13 && dip > -0.137, "dip = {dip}");
    }

    proptest! {
        #[test]
        fn kernel_profiles_stay_in_range(u in -1.0f64..=1.0) {
            let k0 = kappa0(u).unwrap();
            let k1 = kappa1(u).unwrap();
            let k = kappa_ntk(u).unwrap();
            prop_assert!((0.0..=1.0).contains(&k0));
            prop_assert!((0.0..=1.0).contains(&k1));
            prop_assert!((-0.137..=2.0).contains(&k));
        }

        #[test]
        fn kernel_profiles_are_nondecreasing(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(kappa0(lo).unwrap() <= kappa0(hi).unwrap() + 1e-12);
            prop_assert!(kappa1(lo).unwrap() <= kappa1(hi).unwrap() + 1e-12);
        }

        #[test]
        fn tangent_profile_is_nondecreasing_right_of_the_dip(
            a in -0.5f64..=1.0, b in -0.5f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(kappa_ntk(lo).unwrap() <= kappa_ntk(hi).unwrap() + 1e-12);
        }

        #[test]
        fn two_layer_kernel_is_symmetric_and_homogeneous(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            y in proptest::collection::vec(-5.0f64..5.0, 3),
            c in 0.1f64..4.0,
        ) {
            let k = two_layer_ntk(&x, &y).unwrap();
            let kt = two_layer_ntk(&y, &x).unwrap();
            prop_assert!((k - kt).abs() <= 1e-12 * (1.0 + k.abs()));
            let xs: alloc::vec::Vec<f64> = x.iter().map(|v| c * v).collect();
            let ks = two_layer_ntk(&xs, &y).unwrap();
            prop_assert!((ks - c * k).abs() <= 1e-10 * (1.0 + k.abs()) * (1.0 + c));
        }

        #[test]
        fn self_kernel_is_twice_squared_norm(
            x in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            let k = two_layer_ntk(&x, &x).unwrap();
            // sqrt(ulp) tolerance: the profile has a square-root cusp at
            // cosine 1, so one ulp of cosine rounding moves kappa1 by ~1e-8.
            prop_assert!((k - 2.0 * n2).abs() <= 1e-7 * (1.0 + n2));
        }
    }
}
