//! Parametrized dual controls `ν`.
//!
//! `Constant`, `Push` and `Bang` are single feedback laws. `Split` mixes the
//! zero control with a push: its density is `a·Z⁰ + (1-a)·Z^push`, itself an
//! exponential density whose control `w_t·ν^push_t` (with `w_t ∈ [0,1]` the
//! push share of the mixture) is bounded by the same `ν_max`.
//!
//! `Capped` is specific to a dual multiplier `z`: the zero-control density
//! `Z⁰` is capped at `z_c(η_T)/z`, and the removed mass is carried by a push,
//!
//! ```text
//! Z_T = min(Z⁰_T, z_c(η_T)/z) + (Z⁰_T - E[min(Z⁰_T, z_c(η_T)/z) | B]) · Z^push_T / Z⁰_T.
//! ```
//!
//! Conditionally on `B` it has the mean `Z⁰_T`, so it is again the density of
//! a martingale measure.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_finite, require_positive, Result};

pub const DEFAULT_NU_MAX: f64 = 1e3;

/// Controls above this bound are treated as unbounded and rejected.
pub const NU_MAX_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ControlFamily {
    /// `ν_t ≡ ν̄`.
    Constant { nu: f64 },
    /// `ν_t = κ(η_t - η*)`: pulls the factor toward `η*` under the new measure.
    Push { target: f64, kappa: f64 },
    /// `ν_t = n(η₀ - η*)` for `t < 1/n`, zero afterwards; carries the factor
    /// mean from `η₀` to `η*` by time `1/n`.
    Bang { target: f64, n: f64 },
    /// Mixture with weight `weight` on `ν ≡ 0` and the rest on a push.
    Split {
        weight: f64,
        target: f64,
        kappa: f64,
    },
    /// `ν ≡ 0` capped at the critical density, excess carried by a push.
    Capped { target: f64, kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub family: ControlFamily,
    pub nu_max: f64,
}

impl ControlParams {
    pub fn new(family: ControlFamily) -> Self {
        Self {
            family,
            nu_max: DEFAULT_NU_MAX,
        }
    }

    pub fn zero() -> Self {
        Self::new(ControlFamily::Constant { nu: 0.0 })
    }

    pub fn constant(nu: f64) -> Self {
        Self::new(ControlFamily::Constant { nu })
    }

    pub fn push(target: f64, kappa: f64) -> Self {
        Self::new(ControlFamily::Push { target, kappa })
    }

    pub fn bang(target: f64, n: f64) -> Self {
        Self::new(ControlFamily::Bang { target, n })
    }

    pub fn split(weight: f64, target: f64, kappa: f64) -> Self {
        Self::new(ControlFamily::Split {
            weight,
            target,
            kappa,
        })
    }

    pub fn capped(target: f64, kappa: f64) -> Self {
        Self::new(ControlFamily::Capped { target, kappa })
    }

    /// True for families whose density depends on the dual multiplier.
    pub fn needs_multiplier(&self) -> bool {
        matches!(self.family, ControlFamily::Capped { .. })
    }

    pub fn with_nu_max(mut self, nu_max: f64) -> Self {
        self.nu_max = nu_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("nu_max", self.nu_max)?;
        if self.nu_max > NU_MAX_LIMIT {
            return Err(invalid(
                "nu_max",
                format!("{} exceeds the bound {NU_MAX_LIMIT}", self.nu_max),
            ));
        }
        match self.family {
            ControlFamily::Constant { nu } => {
                require_finite("nu", nu)?;
            }
            ControlFamily::Push { target, kappa } | ControlFamily::Capped { target, kappa } => {
                require_finite("target", target)?;
                require_finite("kappa", kappa)?;
                if kappa < 0.0 {
                    return Err(invalid("kappa", "must be nonnegative"));
                }
            }
            ControlFamily::Bang { target, n } => {
                require_finite("target", target)?;
                require_positive("n", n)?;
            }
            ControlFamily::Split {
                weight,
                target,
                kappa,
            } => {
                require_finite("target", target)?;
                require_finite("kappa", kappa)?;
                if !(weight > 0.0 && weight <= 1.0) {
                    return Err(invalid(
                        "weight",
                        format!("need 0 < weight <= 1, got {weight}"),
                    ));
                }
                if kappa < 0.0 {
                    return Err(invalid("kappa", "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            ControlFamily::Constant { .. } => "constant",
            ControlFamily::Push { .. } => "push",
            ControlFamily::Bang { .. } => "bang",
            ControlFamily::Split { .. } => "split",
            ControlFamily::Capped { .. } => "capped",
        }
    }

    /// `key=value` pairs joined by `;`, for tables.
    pub fn params_string(&self) -> String {
        let body = match self.family {
            ControlFamily::Constant { nu } => format!("nu={nu}"),
            ControlFamily::Push { target, kappa } | ControlFamily::Capped { target, kappa } => {
                format!("target={target};kappa={kappa}")
            }
            ControlFamily::Bang { target, n } => format!("target={target};n={n}"),
            ControlFamily::Split {
                weight,
                target,
                kappa,
            } => {
                format!("weight={weight};target={target};kappa={kappa}")
            }
        };
        format!("{body};nu_max={}", self.nu_max)
    }

    /// Mixture weights and the feedback law of each component. For `Capped`
    /// the weights are nominal: the actual split is path dependent.
    pub(crate) fn components(&self, eta0: f64) -> (Vec<f64>, Vec<Feedback>) {
        let clip = |v: f64| v.clamp(-self.nu_max, self.nu_max);
        match self.family {
            ControlFamily::Constant { nu } => (vec![1.0], vec![Feedback::Constant(clip(nu))]),
            ControlFamily::Push { target, kappa } => (
                vec![1.0],
                vec![Feedback::Push {
                    target,
                    kappa,
                    nu_max: self.nu_max,
                }],
            ),
            ControlFamily::Bang { target, n } => (
                vec![1.0],
                vec![Feedback::Bang {
                    level: clip(n * (eta0 - target)),
                    until: 1.0 / n,
                }],
            ),
            ControlFamily::Split {
                weight,
                target,
                kappa,
            } => {
                let push = Feedback::Push {
                    target,
                    kappa,
                    nu_max: self.nu_max,
                };
                if weight >= 1.0 {
                    (vec![1.0], vec![Feedback::Constant(0.0)])
                } else {
                    (
                        vec![weight, 1.0 - weight],
                        vec![Feedback::Constant(0.0), push],
                    )
                }
            }
            ControlFamily::Capped { target, kappa } => (
                vec![0.5, 0.5],
                vec![
                    Feedback::Constant(0.0),
                    Feedback::Push {
                        target,
                        kappa,
                        nu_max: self.nu_max,
                    },
                ],
            ),
        }
    }
}

/// A single feedback law `ν(t, η)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Feedback {
    Constant(f64),
    Push {
        target: f64,
        kappa: f64,
        nu_max: f64,
    },
    Bang {
        level: f64,
        until: f64,
    },
}

impl Feedback {
    #[inline]
    pub(crate) fn nu(&self, t: f64, eta: f64) -> f64 {
        match *self {
            Feedback::Constant(nu) => nu,
            Feedback::Push {
                target,
                kappa,
                nu_max,
            } => (kappa * (eta - target)).clamp(-nu_max, nu_max),
            Feedback::Bang { level, until } => {
                if t < until {
                    level
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn is_static(&self) -> bool {
        matches!(self, Feedback::Constant(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ControlParams::zero().validate().is_ok());
        assert!(ControlParams::constant(f64::INFINITY).validate().is_err());
        assert!(ControlParams::push(0.0, -1.0).validate().is_err());
        assert!(ControlParams::push(0.0, 1.0)
            .with_nu_max(1e7)
            .validate()
            .is_err());
        assert!(ControlParams::split(0.0, -3.0, 10.0).validate().is_err());
        assert!(ControlParams::split(0.5, -3.0, 10.0).validate().is_ok());
        assert!(ControlParams::bang(-1.0, 0.0).validate().is_err());
    }

    #[test]
    fn realized_controls_are_clipped() {
        let (_, fb) = ControlParams::push(-6.0, 1e4)
            .with_nu_max(50.0)
            .components(0.0);
        assert_eq!(fb[0].nu(0.0, 0.0), 50.0);
        assert!((fb[0].nu(0.0, -6.001) + 10.0).abs() < 1e-9);
        let (_, fb) = ControlParams::bang(-6.0, 40.0).components(0.0);
        assert_eq!(fb[0].nu(0.0, 3.0), 240.0);
        assert_eq!(fb[0].nu(0.03, 3.0), 0.0);
        let (w, fb) = ControlParams::split(0.25, -4.0, 10.0).components(0.0);
        assert_eq!(w, vec![0.25, 0.75]);
        assert_eq!(fb.len(), 2);
    }
}
