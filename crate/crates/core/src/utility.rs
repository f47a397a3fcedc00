//! CRRA utilities and their convex conjugates.
//!
//! `U(x) = x^p / p` for `p ∈ (-∞, 1) \ {0}` and `U(x) = log x`, extended by
//! `-∞` on the excluded region (`x < 0`, and `x = 0` when `p ≤ 0`). The
//! conjugate `V(z) = sup_{x>0} (U(x) - xz)` is available in closed form:
//!
//! ```text
//! power:  V(z) = (1-p)/p · z^{p/(p-1)}
//! log:    V(z) = -log z - 1
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Result};

/// A member of the CRRA family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UtilitySpec {
    Power(f64),
    Log,
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        if !p.is_finite() || p >= 1.0 || p == 0.0 {
            return Err(invalid(
                "power exponent",
                format!("need p < 1, p != 0, got {p}"),
            ));
        }
        Ok(UtilitySpec::Power(p))
    }

    pub fn log() -> Self {
        UtilitySpec::Log
    }

    /// Checks the exponent of a `Power` built by hand.
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Power(p) => UtilitySpec::power(p).map(|_| ()),
            UtilitySpec::Log => Ok(()),
        }
    }

    /// Relative risk aversion exponent `p` (0 for log).
    pub fn exponent(&self) -> f64 {
        match *self {
            UtilitySpec::Power(p) => p,
            UtilitySpec::Log => 0.0,
        }
    }

    /// `U(x)` with the extended-value convention.
    pub fn eval_u(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Power(p) => {
                if x < 0.0 || (x == 0.0 && p < 0.0) {
                    f64::NEG_INFINITY
                } else {
                    x.powf(p) / p
                }
            }
            UtilitySpec::Log => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    x.ln()
                }
            }
        }
    }

    /// `U'(x)`; `+∞` at and below zero.
    pub fn marginal(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            UtilitySpec::Power(p) => x.powf(p - 1.0),
            UtilitySpec::Log => 1.0 / x,
        }
    }

    /// `(U')^{-1}(z)`, the wealth at which marginal utility equals `z`.
    pub fn inv_marginal(&self, z: f64) -> Result<f64> {
        require_positive("z", z)?;
        Ok(self.inv_marginal_unchecked(z))
    }

    #[inline]
    pub(crate) fn inv_marginal_unchecked(&self, z: f64) -> f64 {
        match *self {
            UtilitySpec::Power(p) => z.powf(1.0 / (p - 1.0)),
            UtilitySpec::Log => 1.0 / z,
        }
    }

    /// Convex conjugate `V(z)`.
    pub fn eval_v(&self, z: f64) -> Result<f64> {
        require_positive("z", z)?;
        Ok(self.v_unchecked(z))
    }

    /// `V(z)` without the domain check. Hot loops call this with `z > 0`
    /// guaranteed by construction (products of positive densities).
    #[inline]
    pub fn v_unchecked(&self, z: f64) -> f64 {
        match *self {
            UtilitySpec::Power(p) => (1.0 - p) / p * z.powf(p / (p - 1.0)),
            UtilitySpec::Log => -z.ln() - 1.0,
        }
    }

    /// `V(z·D)/D` from `log D`; finite for densities far outside the range
    /// where `D` itself is representable.
    #[inline]
    pub fn v_over_density(&self, z: f64, log_d: f64) -> f64 {
        self.v_scaled(z, log_d, log_d)
    }

    /// `V(z·D)/S` from `log D` and `log S`.
    #[inline]
    pub fn v_scaled(&self, z: f64, log_d: f64, log_s: f64) -> f64 {
        match *self {
            UtilitySpec::Power(p) => {
                let q = p / (p - 1.0);
                (1.0 - p) / p * (q * (z.ln() + log_d) - log_s).exp()
            }
            UtilitySpec::Log => (-z.ln() - log_d - 1.0) * (-log_s).exp(),
        }
    }

    /// `V'(z) = -(U')^{-1}(z)`.
    pub fn v_prime(&self, z: f64) -> Result<f64> {
        Ok(-self.inv_marginal(z)?)
    }
}

/// Brute-force conjugate on a log-spaced wealth grid, refined once around the
/// grid argmax by golden-section search.
///
/// Independent of the closed forms above; it only calls `eval_u`.
pub struct ConjugateOracle {
    utility: UtilitySpec,
    xs: Vec<f64>,
    us: Vec<f64>,
}

impl ConjugateOracle {
    pub const X_MIN: f64 = 1e-8;
    pub const X_MAX: f64 = 1e8;
    pub const POINTS: usize = 1_000_000;

    pub fn new(utility: UtilitySpec) -> Self {
        Self::with_grid(utility, Self::X_MIN, Self::X_MAX, Self::POINTS)
    }

    pub fn with_grid(utility: UtilitySpec, x_min: f64, x_max: f64, points: usize) -> Self {
        let (lo, hi) = (x_min.ln(), x_max.ln());
        let step = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| (lo + step * i as f64).exp()).collect();
        let us = xs.iter().map(|&x| utility.eval_u(x)).collect();
        Self { utility, xs, us }
    }

    /// `sup_x (U(x) - xz)` over the grid, then refined.
    pub fn eval(&self, z: f64) -> f64 {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, (&x, &u)) in self.xs.iter().zip(&self.us).enumerate() {
            let val = u - x * z;
            if val > best_val {
                best_val = val;
                best = i;
            }
        }
        let lo = self.xs[best.saturating_sub(1)];
        let hi = self.xs[(best + 1).min(self.xs.len() - 1)];
        let f = |x: f64| self.utility.eval_u(x) - x * z;
        let refined = golden_max(f, lo, hi, 200);
        refined.max(best_val)
    }
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        }
    }
    fa.max(fb).max(f(lo)).max(f(hi))
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_argmin(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    if fa < fb {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn utilities() -> [UtilitySpec; 3] {
        [
            UtilitySpec::Power(-1.0),
            UtilitySpec::Power(0.5),
            UtilitySpec::Log,
        ]
    }

    #[test]
    fn eval_u_examples() {
        assert_eq!(UtilitySpec::Power(0.5).eval_u(4.0), 4.0);
        assert_eq!(UtilitySpec::Log.eval_u(1.0), 0.0);
        assert_eq!(UtilitySpec::Power(-1.0).eval_u(-1.0), f64::NEG_INFINITY);
        assert_eq!(UtilitySpec::Power(-1.0).eval_u(0.0), f64::NEG_INFINITY);
        assert_eq!(UtilitySpec::Power(0.5).eval_u(0.0), 0.0);
        assert_eq!(UtilitySpec::Log.eval_u(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn inv_marginal_examples() {
        assert!((UtilitySpec::Power(0.5).inv_marginal(0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((UtilitySpec::Log.inv_marginal(2.0).unwrap() - 0.5).abs() < 1e-15);
        let u = UtilitySpec::Power(-1.0);
        let by_bisection = bisect_decreasing(|x| u.marginal(x) - 4.0, 1e-6, 1e6);
        let closed = u.inv_marginal(4.0).unwrap();
        assert!((by_bisection - 0.5).abs() < 1e-10);
        assert!((closed - 4f64.powf(-0.5)).abs() < 1e-15);
        assert!(u.inv_marginal(0.0).is_err());
        assert!(u.inv_marginal(-1.0).is_err());
    }

    #[test]
    fn eval_v_matches_brute_force() {
        let cases = [
            (UtilitySpec::Log, 1.0, -1.0),
            (UtilitySpec::Power(0.5), 2.0, 0.5),
            (UtilitySpec::Power(-1.0), 4.0, -4.0),
        ];
        for (u, z, expected) in cases {
            let oracle = ConjugateOracle::with_grid(u, 1e-8, 1e8, 200_000);
            let brute = oracle.eval(z);
            assert!(
                (brute - expected).abs() < 1e-6,
                "{u:?} z={z}: brute {brute}"
            );
            assert!((u.eval_v(z).unwrap() - expected).abs() < 1e-12);
        }
        assert!(UtilitySpec::Log.eval_v(0.0).is_err());
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(UtilitySpec::power(1.0).is_err());
        assert!(UtilitySpec::power(0.0).is_err());
        assert!(UtilitySpec::power(f64::NAN).is_err());
        assert!(UtilitySpec::power(-3.0).is_ok());
    }

    #[test]
    fn inada_and_monotonicity() {
        for u in utilities() {
            assert!(u.marginal(1e-12) > 1e5);
            assert!(u.marginal(1e12) < 1e-5);
            let xs: Vec<f64> = (0..200).map(|i| 0.01 * 1.05f64.powi(i)).collect();
            for w in xs.windows(3) {
                let (a, b, c) = (u.eval_u(w[0]), u.eval_u(w[1]), u.eval_u(w[2]));
                assert!(b > a && c > b);
                // concavity on a geometric grid: slope decreases
                assert!((c - b) / (w[2] - w[1]) < (b - a) / (w[1] - w[0]));
            }
        }
    }

    #[test]
    fn power_elasticity_below_one() {
        let u = UtilitySpec::Power(0.5);
        for x in [1e3, 1e6, 1e9] {
            let ratio = x * u.marginal(x) / u.eval_u(x);
            assert!((ratio - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn v_convex_decreasing_and_derivative() {
        for u in utilities() {
            let zs: Vec<f64> = (0..400).map(|i| 1e-3 * 1.035f64.powi(i)).collect();
            for w in zs.windows(3) {
                let v: Vec<f64> = w.iter().map(|&z| u.v_unchecked(z)).collect();
                assert!(v[1] < v[0]);
                let s1 = (v[1] - v[0]) / (w[1] - w[0]);
                let s2 = (v[2] - v[1]) / (w[2] - w[1]);
                assert!(s2 - s1 >= -1e-10 * s1.abs().max(1.0));
            }
            for z in [0.01, 0.3, 1.0, 7.0, 100.0] {
                let h = 1e-5 * z;
                let fd = (u.v_unchecked(z + h) - u.v_unchecked(z - h)) / (2.0 * h);
                let exact = -u.inv_marginal(z).unwrap();
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "{u:?} z={z}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn fenchel_inequality(ln_x in -8.0f64..8.0, ln_z in -8.0f64..8.0, which in 0usize..3) {
            let u = utilities()[which];
            let (x, z) = (ln_x.exp(), ln_z.exp());
            let v = u.v_unchecked(z);
            prop_assert!(u.eval_u(x) <= v + x * z + 1e-9 * (v.abs() + x * z).max(1.0));
            let xs = u.inv_marginal(z).unwrap();
            let gap = v + xs * z - u.eval_u(xs);
            prop_assert!(gap.abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
