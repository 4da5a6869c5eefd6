//! Gaussian quadrature rules built by the Golub-Welsch method.
//!
//! Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix of
//! the three-term recurrence of the orthogonal polynomials; weights are the
//! total mass times the squared first components of the eigenvectors. The
//! eigenproblem is solved by QL iteration with implicit shifts, rotating the
//! weight vector along, so the crate stays free of external linear algebra.
//!
//! Two weight functions cover every integral in this crate:
//!
//! - probabilists' Gauss-Hermite, weight `exp(-u^2/2) / sqrt(2 pi)` on the
//!   real line, total mass 1, for Gaussian expectations of activations;
//! - symmetric Gauss-Jacobi, weight `(1 - t^2)^alpha` on `[-1, 1]`, the
//!   weight of sphere-harmonic projections on `S^{p-1}` when
//!   `alpha = (p - 3) / 2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Nodes and weights of a Gaussian quadrature rule.
///
/// With `n` nodes the rule integrates polynomials of degree up to `2n - 1`
/// exactly against its weight function. Nodes are sorted ascending; for the
/// symmetric weights used here they come in `(-t, t)` pairs with equal
/// weights, so odd integrands cancel exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a rule from recurrence coefficients: `diag[k]` and
    /// `offdiag[k]` are the a_k and b_{k+1} of the monic three-term
    /// recurrence, `mass` is the integral of the weight function.
    fn from_recurrence(mut diag: Vec<f64>, mut offdiag: Vec<f64>, mass: f64) -> Result<Self> {
        let n = diag.len();
        debug_assert_eq!(offdiag.len(), n);
        let mut first_components = vec![0.0; n];
        first_components[0] = 1.0;
        symmetric_tridiagonal_ql(&mut diag, &mut offdiag, &mut first_components)?;
        let weights = first_components.iter().map(|z| mass * z * z).collect();
        Ok(QuadratureRule { nodes: diag, weights })
    }

    /// Probabilists' Gauss-Hermite rule with `n` nodes: weight
    /// `exp(-u^2/2)/sqrt(2 pi)`, total mass 1.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument { context: "quadrature rule needs at least one node" });
        }
        let diag = vec![0.0; n];
        let offdiag: Vec<f64> = (0..n).map(|k| libm::sqrt((k + 1) as f64)).collect();
        Self::from_recurrence(diag, offdiag, 1.0)
    }

    /// Symmetric Gauss-Jacobi rule with `n` nodes: weight `(1 - t^2)^alpha`
    /// on `[-1, 1]`. Requires `alpha > -0.5`; sphere dimensions `p >= 3`
    /// give `alpha = (p - 3) / 2 >= 0`.
    pub fn gauss_jacobi_symmetric(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument { context: "quadrature rule needs at least one node" });
        }
        if !alpha.is_finite() {
            return Err(Error::NonFinite { context: "Jacobi exponent alpha" });
        }
        if alpha <= -0.5 {
            return Err(Error::InvalidArgument { context: "Jacobi exponent must exceed -1/2" });
        }
        let diag = vec![0.0; n];
        // For equal exponents the recurrence simplifies to
        // b_k^2 = k (k + 2 alpha) / ((2k + 2 alpha + 1)(2k + 2 alpha - 1)).
        let offdiag: Vec<f64> = (1..=n)
            .map(|k| {
                let k = k as f64;
                let sq = k * (k + 2.0 * alpha)
                    / ((2.0 * k + 2.0 * alpha + 1.0) * (2.0 * k + 2.0 * alpha - 1.0));
                libm::sqrt(sq)
            })
            .collect();
        let mass = jacobi_mass(alpha);
        Self::from_recurrence(diag, offdiag, mass)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total mass of the weight function, recovered as the weight sum.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Approximates the integral of `f` against the weight function.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Mass of the weight `(1 - t^2)^alpha` on `[-1, 1]`, computed through
/// log-gamma so large `alpha` cannot overflow intermediate factorials:
/// `2^(2 alpha + 1) B(alpha + 1, alpha + 1)`.
pub fn jacobi_mass(alpha: f64) -> f64 {
    libm::exp(
        (2.0 * alpha + 1.0) * core::f64::consts::LN_2 + 2.0 * libm::lgamma(alpha + 1.0)
            - libm::lgamma(2.0 * alpha + 2.0),
    )
}

/// QL iteration with implicit shifts on a symmetric tridiagonal matrix.
///
/// On return `d` holds the eigenvalues sorted ascending and `z` the
/// corresponding entries of `z` rotated by the accumulated orthogonal
/// transform (so first components of eigenvectors when `z` starts as e_1).
/// `e[n-1]` is workspace.
fn symmetric_tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    let prec = f64::EPSILON;
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                if libm::fabs(e[m]) <= prec * (libm::fabs(d[m]) + libm::fabs(d[m + 1])) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            if iterations >= 50 {
                return Err(Error::NumericFailure { context: "tridiagonal QL iteration stalled" });
            }
            iterations += 1;
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + libm::copysign(r, g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                if libm::fabs(f) >= libm::fabs(g) {
                    c = g / f;
                    r = libm::hypot(c, 1.0);
                    e[i + 1] = f * r;
                    s = 1.0 / r;
                    c *= s;
                } else {
                    s = f / g;
                    r = libm::hypot(s, 1.0);
                    e[i + 1] = g * r;
                    c = 1.0 / r;
                    s *= c;
                }
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    for i in 1..n {
        let dk = d[i];
        let zk = z[i];
        let mut j = i;
        while j > 0 && d[j - 1] > dk {
            d[j] = d[j - 1];
            z[j] = z[j - 1];
            j -= 1;
        }
        d[j] = dk;
        z[j] = zk;
    }
    Ok(())
}
