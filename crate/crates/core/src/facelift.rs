//! The facelift envelope of `z ↦ V(z) + φz`.
//!
//! For `ψ ≤ φ` the envelope is the largest convex function below `V(z) + φz`
//! whose difference with `zψ` is nonincreasing:
//!
//! ```text
//! V̲(z; φ, ψ) = V(z) + φz                       for z ≤ z_c
//!            = V(z_c) + φ z_c + ψ (z - z_c)    for z > z_c
//! ```
//!
//! where `V'(z_c) + φ = ψ`, i.e. `z_c = U'(φ - ψ)`, and `z_c = +∞` when `φ = ψ`.
//! Equivalently `V̲(z; φ, ψ) = sup_{x > -ψ} (U(x + φ) - xz)`.

use crate::error::{invalid, require_finite, require_positive, Result};
use crate::utility::{golden_max, UtilitySpec};

/// Bracket searched by the bisection fallback for `z_c`.
const ZC_BRACKET: (f64, f64) = (1e-10, 1e10);

/// Solves `V'(z) + φ - ψ = 0`.
///
/// Uses the closed form `U'(φ - ψ)`; falls back to bisection on the bracket
/// `[1e-10, 1e10]` if the closed form is not finite and positive.
pub fn critical_z(utility: UtilitySpec, phi: f64, psi: f64) -> Result<f64> {
    require_finite("phi", phi)?;
    require_finite("psi", psi)?;
    if psi > phi {
        return Err(invalid(
            "psi",
            format!("need psi <= phi, got psi={psi} > phi={phi}"),
        ));
    }
    if phi == psi {
        return Ok(f64::INFINITY);
    }
    let closed = utility.marginal(phi - psi);
    if closed.is_finite() && closed > 0.0 {
        return Ok(closed);
    }
    let g = |z: f64| -utility.inv_marginal_unchecked(z) + phi - psi;
    // g is increasing in z
    let (mut lo, mut hi) = (ZC_BRACKET.0.ln(), ZC_BRACKET.1.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// `V̲(·; φ, ψ)` with its cached critical point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceliftEnvelope {
    utility: UtilitySpec,
    phi: f64,
    psi: f64,
    z_c: f64,
    /// `V(z_c) + φ z_c - ψ z_c`, the intercept of the tangent piece.
    tangent_intercept: f64,
}

impl FaceliftEnvelope {
    pub fn new(utility: UtilitySpec, phi: f64, psi: f64) -> Result<Self> {
        utility.validate()?;
        let z_c = critical_z(utility, phi, psi)?;
        let tangent_intercept = if z_c.is_finite() {
            utility.v_unchecked(z_c) + (phi - psi) * z_c
        } else {
            f64::NAN
        };
        Ok(Self {
            utility,
            phi,
            psi,
            z_c,
            tangent_intercept,
        })
    }

    pub fn utility(&self) -> UtilitySpec {
        self.utility
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// Critical point; `f64::INFINITY` when the facelift is inactive.
    pub fn z_c(&self) -> f64 {
        self.z_c
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        require_positive("z", z)?;
        Ok(self.eval_unchecked(z))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, z: f64) -> f64 {
        if z <= self.z_c {
            self.utility.v_unchecked(z) + self.phi * z
        } else {
            self.tangent_intercept + self.psi * z
        }
    }

    /// `V̲(zD)/D` from `log D`.
    #[inline]
    pub fn eval_over_density(&self, z: f64, log_d: f64) -> f64 {
        self.eval_scaled(z, log_d, log_d)
    }

    /// `V̲(zD)/S` from `log D` and `log S`.
    #[inline]
    pub fn eval_scaled(&self, z: f64, log_d: f64, log_s: f64) -> f64 {
        let ratio = (log_d - log_s).exp();
        if z.ln() + log_d <= self.z_c.ln() {
            self.utility.v_scaled(z, log_d, log_s) + self.phi * z * ratio
        } else {
            self.tangent_intercept * (-log_s).exp() + self.psi * z * ratio
        }
    }

    /// The unmodified terminal value `V(z) + φz`.
    pub fn naive(&self, z: f64) -> Result<f64> {
        require_positive("z", z)?;
        Ok(self.utility.v_unchecked(z) + self.phi * z)
    }

    /// Brute-force `sup_{x > -ψ} (U(x + φ) - xz)` over a log-spaced grid of
    /// offsets `x + ψ ∈ [1e-14, x_max + ψ]`, refined around the grid argmax.
    pub fn sup_oracle(&self, z: f64) -> Result<f64> {
        self.sup_oracle_with(z, 1e4, 100_000)
    }

    pub fn sup_oracle_with(&self, z: f64, x_max: f64, points: usize) -> Result<f64> {
        require_positive("z", z)?;
        let objective = |d: f64| {
            let x = d - self.psi;
            self.utility.eval_u(x + self.phi) - x * z
        };
        let (lo, hi) = (1e-14f64.ln(), (x_max + self.psi).max(1.0).ln());
        let step = (hi - lo) / (points - 1) as f64;
        let offset = |i: usize| (lo + step * i as f64).exp();
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..points {
            let val = objective(offset(i));
            if val > best_val {
                best_val = val;
                best = i;
            }
        }
        let a = if best == 0 { 0.0 } else { offset(best - 1) };
        let b = offset((best + 1).min(points - 1));
        let refined = golden_max(
            |d| {
                if d > 0.0 {
                    objective(d)
                } else {
                    f64::NEG_INFINITY
                }
            },
            a,
            b,
            200,
        );
        Ok(refined.max(best_val))
    }
}

/// Small-horizon limit of the primal value: `U(x + φ₀)` for `x > -Φ`, `-∞`
/// for `x < -Φ`. At `x = -Φ` the right limit `U(φ₀ - Φ)` is returned.
pub fn primal_limit(utility: UtilitySpec, phi0: f64, germ: f64, x: f64) -> Result<f64> {
    if germ > phi0 {
        return Err(invalid(
            "germ price",
            format!("need germ <= phi0, got {germ} > {phi0}"),
        ));
    }
    if x < -germ {
        Ok(f64::NEG_INFINITY)
    } else {
        Ok(utility.eval_u(x + phi0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQRT: UtilitySpec = UtilitySpec::Power(0.5);

    #[test]
    fn critical_point_examples() {
        // closed form against bisection on V'(z) + 1 = 0
        let by_closed = critical_z(SQRT, 1.0, 0.0).unwrap();
        let mut lo = 1e-6f64;
        let mut hi = 1e6f64;
        for _ in 0..300 {
            let mid = (lo * hi).sqrt();
            if SQRT.v_prime(mid).unwrap() + 1.0 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((by_closed - 1.0).abs() < 1e-12);
        assert!((lo - 1.0).abs() < 1e-9);
        assert!((critical_z(UtilitySpec::Log, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            critical_z(UtilitySpec::Log, 0.7, 0.7).unwrap(),
            f64::INFINITY
        );
        assert!(critical_z(UtilitySpec::Log, 0.0, 1.0).is_err());
    }

    #[test]
    fn critical_point_solves_first_order_condition() {
        for u in [
            SQRT,
            UtilitySpec::Log,
            UtilitySpec::Power(-1.0),
            UtilitySpec::Power(-4.0),
        ] {
            for (phi, psi) in [(1.0, 0.0), (2.0, -1.0), (0.3, 0.1)] {
                let zc = critical_z(u, phi, psi).unwrap();
                assert!((u.v_prime(zc).unwrap() + phi - psi).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn envelope_examples() {
        let env = FaceliftEnvelope::new(SQRT, 1.0, 0.0).unwrap();
        assert!((env.eval(0.5).unwrap() - 2.5).abs() < 1e-12);
        assert!((env.eval(2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((env.naive(2.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((env.sup_oracle(2.0).unwrap() - 2.0).abs() < 1e-6);
        assert!((env.sup_oracle(0.5).unwrap() - 2.5).abs() < 1e-6);

        let flat = FaceliftEnvelope::new(UtilitySpec::Log, 0.4, 0.4).unwrap();
        for z in [0.1, 1.0, 30.0] {
            let naive = UtilitySpec::Log.eval_v(z).unwrap() + 0.4 * z;
            assert!((flat.eval(z).unwrap() - naive).abs() < 1e-14);
            assert!((flat.sup_oracle(z).unwrap() - naive).abs() < 1e-6);
        }

        let log = FaceliftEnvelope::new(UtilitySpec::Log, 2.0, 1.0).unwrap();
        assert!((log.eval(2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((log.sup_oracle(2.0).unwrap() - 2.0).abs() < 1e-6);
        assert!(log.eval(0.0).is_err());
        assert!(FaceliftEnvelope::new(SQRT, 0.0, 0.5).is_err());
    }

    #[test]
    fn primal_limit_examples() {
        assert_eq!(primal_limit(SQRT, 1.0, 0.0, 3.0).unwrap(), 4.0);
        assert_eq!(
            primal_limit(SQRT, 1.0, 0.5, -0.6).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(primal_limit(UtilitySpec::Log, 0.3, 0.3, 0.7).unwrap(), 0.0);
        // right-limit convention at x = -Φ
        assert_eq!(
            primal_limit(SQRT, 1.0, 0.75, -0.75).unwrap(),
            SQRT.eval_u(0.25)
        );
        assert!(primal_limit(SQRT, 1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn smooth_fit_at_critical_point() {
        let env = FaceliftEnvelope::new(UtilitySpec::Power(-1.0), 1.5, 0.25).unwrap();
        let zc = env.z_c();
        let h = 1e-7 * zc;
        let left = (env.eval(zc).unwrap() - env.eval(zc - h).unwrap()) / h;
        let right = (env.eval(zc + h).unwrap() - env.eval(zc).unwrap()) / h;
        assert!((left - right).abs() < 1e-6);
        assert!((right - 0.25).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn envelope_below_naive_and_tilted_nonincreasing(
            phi in -2.0f64..2.0, drop in 0.0f64..2.0, ln_z in -5.0f64..5.0, which in 0usize..3,
        ) {
            let u = [SQRT, UtilitySpec::Log, UtilitySpec::Power(-1.0)][which];
            let psi = phi - drop;
            let env = FaceliftEnvelope::new(u, phi, psi).unwrap();
            let z = ln_z.exp();
            let naive = env.naive(z).unwrap();
            let lifted = env.eval(z).unwrap();
            prop_assert!(lifted <= naive + 1e-12 * naive.abs().max(1.0));
            if z <= env.z_c() {
                prop_assert_eq!(lifted, naive);
            } else {
                prop_assert!(lifted < naive);
            }
            let z2 = z * 1.01;
            let tilt = |w: f64| env.eval(w).unwrap() - w * psi;
            prop_assert!(tilt(z2) - tilt(z) <= 1e-10 * tilt(z).abs().max(1.0));
        }
    }
}
