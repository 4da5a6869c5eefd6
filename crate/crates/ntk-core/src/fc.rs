//! Deep fully-connected ReLU network kernels by the arc-cosine recursion.
//!
//! With `Sigma_0 = K_0 = <x, x'>`, each hidden layer maps
//!
//! ```text
//! cos_k   = Sigma_k(x,x') / sqrt(Sigma_k(x,x) Sigma_k(x',x'))
//! Sigma_k = sqrt(Sigma_{k-1}(x,x) Sigma_{k-1}(x',x')) kappa1(cos_{k-1})
//! K_k     = Sigma_k + K_{k-1} kappa0(cos_{k-1})
//! ```
//!
//! where the ReLU closed forms absorb the variance-2 weight scaling. The
//! self covariances propagate alongside (`kappa0(1) = kappa1(1) = 1`, so
//! `Sigma_k(x,x) = |x|^2` for every layer and `K_n(x,x) = (n+1)|x|^2`).

use crate::arccos::{checked_dot, clamp_cosine, kappa0, kappa1, ZERO_NORM_THRESHOLD};
use crate::error::{Error, Result};

/// Covariance and tangent-kernel state after `layer` recursion steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcKernelState {
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub sigma_xy: f64,
    pub ntk_xx: f64,
    pub ntk_yy: f64,
    pub ntk_xy: f64,
    pub layer: usize,
}

impl FcKernelState {
    fn initial(x: &[f64], y: &[f64]) -> Result<Self> {
        let sigma_xy = checked_dot(x, y, "fully-connected kernel inputs")?;
        let sigma_xx = checked_dot(x, x, "fully-connected kernel inputs")?;
        let sigma_yy = checked_dot(y, y, "fully-connected kernel inputs")?;
        Ok(FcKernelState {
            sigma_xx,
            sigma_yy,
            sigma_xy,
            ntk_xx: sigma_xx,
            ntk_yy: sigma_yy,
            ntk_xy: sigma_xy,
            layer: 0,
        })
    }

    fn step(&self) -> Result<Self> {
        // Self tracks: kappa0(1) = kappa1(1) = 1 exactly, no need to
        // round-trip through the cosine.
        let sigma_xx = self.sigma_xx;
        let sigma_yy = self.sigma_yy;
        let ntk_xx = sigma_xx + self.ntk_xx;
        let ntk_yy = sigma_yy + self.ntk_yy;
        let (sigma_xy, ntk_xy) = if sigma_xx <= ZERO_NORM_THRESHOLD || sigma_yy <= ZERO_NORM_THRESHOLD
        {
            // Zero-norm convention: cross terms vanish in the limit.
            (0.0, 0.0)
        } else {
            let scale = libm::sqrt(sigma_xx * sigma_yy);
            let cos = clamp_cosine(self.sigma_xy / scale)?;
            (scale * kappa1(cos)?, scale * kappa1(cos)? + self.ntk_xy * kappa0(cos)?)
        };
        let next = FcKernelState {
            sigma_xx,
            sigma_yy,
            sigma_xy,
            ntk_xx,
            ntk_yy,
            ntk_xy,
            layer: self.layer + 1,
        };
        if !(next.sigma_xy.is_finite() && next.ntk_xy.is_finite() && next.ntk_xx.is_finite()) {
            return Err(Error::NumericFailure { context: "fully-connected recursion produced non-finite value" });
        }
        Ok(next)
    }
}

/// Full kernel state of an `n`-hidden-layer ReLU network on `(x, y)`.
pub fn fc_state(x: &[f64], y: &[f64], n: usize) -> Result<FcKernelState> {
    if n < 1 {
        return Err(Error::InvalidArgument { context: "depth must be at least one hidden layer" });
    }
    let mut state = FcKernelState::initial(x, y)?;
    for _ in 0..n {
        state = state.step()?;
    }
    Ok(state)
}

/// Covariance and tangent kernel `(Sigma_n(x,y), K_n(x,y))` of an
/// `n`-hidden-layer ReLU network of infinite width.
pub fn fc_ntk(x: &[f64], y: &[f64], n: usize) -> Result<(f64, f64)> {
    let state = fc_state(x, y, n)?;
    Ok((state.sigma_xy, state.ntk_xy))
}

/// RKHS distance `sqrt(K_n(x,x) + K_n(y,y) - 2 K_n(x,y))` of the depth-`n`
/// tangent feature map.
pub fn fc_feature_distance(x: &[f64], y: &[f64], n: usize) -> Result<f64> {
    let state = fc_state(x, y, n)?;
    let radicand = state.ntk_xx + state.ntk_yy - 2.0 * state.ntk_xy;
    if radicand < -1e-10 {
        return Err(Error::NegativeValue { context: "squared feature distance", value: radicand });
    }
    Ok(libm::sqrt(radicand.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arccos::two_layer_ntk;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn sphere_identity_ntk_is_depth_plus_one() {
        let x = [0.6, 0.8];
        for n in 1..=5 {
            let (sigma, ntk) = fc_ntk(&x, &x, n).unwrap();
            assert_abs_diff_eq!(sigma, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ntk, (n + 1) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_hidden_layer_equals_two_layer_closed_form() {
        let pairs: [(&[f64], &[f64]); 3] = [
            (&[1.0, 0.0], &[0.0, 1.0]),
            (&[0.3, -0.7, 2.0], &[1.5, 0.2, -0.4]),
            (&[2.0, 0.0], &[0.0, 3.0]),
        ];
        for (x, y) in pairs {
            let (_, ntk) = fc_ntk(x, y, 1).unwrap();
            let direct = two_layer_ntk(x, y).unwrap();
            assert_abs_diff_eq!(ntk, direct, epsilon = 1e-12 * (1.0 + direct.abs()));
        }
        let (_, orth) = fc_ntk(&[1.0, 0.0], &[0.0, 1.0], 1).unwrap();
        assert_abs_diff_eq!(orth, 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn feature_distances_on_reference_pairs() {
        assert_abs_diff_eq!(fc_feature_distance(&[0.6, 0.8], &[0.6, 0.8], 3).unwrap(), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(
            fc_feature_distance(&[1.0, 0.0], &[0.0, 1.0], 1).unwrap(),
            (4.0 - 2.0 / PI).sqrt(),
            epsilon = 1e-12
        );
        // Antipodal unit pair: kappa(-1) = 0 so K(x,y) = 0 and d = 2.
        assert_abs_diff_eq!(
            fc_feature_distance(&[1.0, 0.0], &[-1.0, 0.0], 1).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_input_follows_the_limit_convention() {
        let (sigma, ntk) = fc_ntk(&[0.0, 0.0], &[1.0, 2.0], 3).unwrap();
        assert_eq!(sigma, 0.0);
        assert_eq!(ntk, 0.0);
        assert!(matches!(fc_ntk(&[1.0], &[1.0], 0), Err(Error::InvalidArgument { .. })));
    }

    proptest! {
        #[test]
        fn recursion_is_jointly_two_homogeneous(
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            y in proptest::collection::vec(-3.0f64..3.0, 4),
            a in 0.05f64..20.0,
            n in 1usize..4,
        ) {
            let (_, base) = fc_ntk(&x, &y, n).unwrap();
            let xs: alloc::vec::Vec<f64> = x.iter().map(|v| a * v).collect();
            let ys: alloc::vec::Vec<f64> = y.iter().map(|v| a * v).collect();
            let (_, scaled) = fc_ntk(&xs, &ys, n).unwrap();
            prop_assert!((scaled - a * a * base).abs() <= 1e-11 * (1.0 + a * a * base.abs()));
        }

        #[test]
        fn self_state_dominates_and_respects_cauchy_schwarz(
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            y in proptest::collection::vec(-3.0f64..3.0, 4),
            n in 1usize..5,
        ) {
            let s = fc_state(&x, &y, n).unwrap();
            prop_assert!(s.sigma_xx >= 0.0 && s.sigma_yy >= 0.0);
            prop_assert!(s.ntk_xx >= s.sigma_xx - 1e-12);
            let cs = (s.sigma_xx * s.sigma_yy).sqrt();
            prop_assert!(s.sigma_xy.abs() <= cs + 1e-12 * (1.0 + cs));
            // Self tangent kernel accumulates one Sigma per layer.
            let n2: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((s.ntk_xx - (n as f64 + 1.0) * n2).abs() <= 1e-10 * (1.0 + n2));
        }
    }

    #[test]
    fn gram_matrices_stay_positive_semidefinite() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let dim = 10;
        let count = 20;
        let vectors: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.into_iter().map(|a| a / n).collect()
            })
            .collect();
        for n in 1..=3 {
            let mut gram = nalgebra::DMatrix::<f64>::zeros(count, count);
            for i in 0..count {
                for j in 0..=i {
                    let (_, k) = fc_ntk(&vectors[i], &vectors[j], n).unwrap();
                    gram[(i, j)] = k;
                    gram[(j, i)] = k;
                }
            }
            let eigen = gram.symmetric_eigenvalues();
            let max = eigen.iter().cloned().fold(f64::MIN, f64::max);
            let min = eigen.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min >= -1e-8 * max, "depth {n}: min eig {min}, max eig {max}");
        }
    }
}
