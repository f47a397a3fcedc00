//! The modified dual objective and dual non-attainment diagnostics.
//!
//! The modified objective replaces `V(zZ) + zZφ` by the envelope
//! `V̲(zZ; φ(η_T), inf φ)`. Both objectives share their infimum over
//! densities, yet every density that puts mass on `{zZ_T > z_c(η_T)}` pays a
//! strictly positive pointwise gap. A gap that persists along a minimizing
//! sequence is the numerical signature of a dual minimizer that cannot be
//! attained.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlParams;
use crate::dual::{control_samples, DualSamples};
use crate::error::{invalid, require_positive, Result};
use crate::facelift::FaceliftEnvelope;
use crate::market::{EndowmentSpec, InfSet, PathBundle};
use crate::model::Model;
use crate::rng::Driver;
use crate::stats::{pooled_se, Estimate};
use crate::utility::UtilitySpec;

/// Pathwise tolerance for `V̲ ≤ V + zφ`, relative to the path value.
pub const PATHWISE_TOL: f64 = 1e-12;

/// Evaluates `E[V̲(zZ_T; φ(η_T), inf φ)]` at one control.
pub fn modified_objective_mc(
    horizon: f64,
    z: f64,
    control: &ControlParams,
    model: &Model,
    bundle: &PathBundle,
) -> Result<Estimate> {
    require_positive("z", z)?;
    let samples = control_samples(horizon, control, model, bundle, z)?;
    Ok(compare(&samples, model, z).modified)
}

/// Both objectives of one candidate, evaluated on the same paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateRow {
    pub control: ControlParams,
    pub plain: Estimate,
    pub modified: Estimate,
    /// Mean of the pathwise gap `V + zZφ - V̲ ≥ 0`.
    pub gap: Estimate,
    /// `P[zZ_T ≥ z_c(η_T)]`.
    pub frequency: Estimate,
    /// Paths on which the gap is below `-PATHWISE_TOL` in relative terms.
    pub pathwise_violations: u64,
}

struct Comparison {
    plain: Estimate,
    modified: Estimate,
    gap: Estimate,
    frequency: Estimate,
    violations: u64,
}

fn compare(samples: &DualSamples, model: &Model, z: f64) -> Comparison {
    let u = model.utility;
    let endow = &model.endowment;
    let psi = endow.inf_phi();
    let [plain, modified, gap, frequency, violation] =
        samples.moments(samples.mixture(), |log_z, log_s, eta| {
            let phi = endow.phi(eta);
            let ratio = (log_z - log_s).exp();
            let p = u.v_scaled(z, log_z, log_s) + z * phi * ratio;
            let env = FaceliftEnvelope::new(u, phi, psi).expect("phi >= inf phi");
            let m = env.eval_scaled(z, log_z, log_s);
            let g = p - m;
            let above = if z.ln() + log_z >= env.z_c().ln() {
                (-log_s).exp()
            } else {
                0.0
            };
            let bad = if g < -PATHWISE_TOL * p.abs() {
                1.0
            } else {
                0.0
            };
            [p, m, g, above, bad]
        });
    Comparison {
        plain,
        modified,
        gap,
        frequency,
        // an overflowing path poisons every moment; no pathwise count then
        violations: if violation.mean.is_finite() {
            (violation.mean * violation.n as f64).round() as u64
        } else {
            0
        },
    }
}

/// Strengths of the default sweep, in units of `1/T`.
pub const SWEEP_KAPPAS: [f64; 3] = [4.0, 16.0, 64.0];

/// Where the default sweep parks the excess mass: far enough along the
/// direction of `inf φ` that `φ - inf φ` is below `1e-6` of its initial
/// value, or the centre of an attained infimum.
pub fn sweep_target(endow: &EndowmentSpec) -> f64 {
    let eta0 = endow.eta0();
    match endow.inf_set() {
        InfSet::Asymptotic { direction } => {
            let scale = 1e-6 * (endow.phi(eta0) - endow.inf_phi());
            let mut d = 4.0;
            while d < 64.0 && endow.phi(eta0 + direction * d) - endow.inf_phi() > scale {
                d *= 2.0;
            }
            eta0 + direction * d
        }
        _ => crate::germ::push_targets(endow)[0],
    }
}

/// `ν ≡ 0` followed by capped controls of increasing strength.
pub fn sweep_controls(endow: &EndowmentSpec, horizon: f64, nu_max: f64) -> Vec<ControlParams> {
    let target = sweep_target(endow);
    std::iter::once(ControlParams::zero().with_nu_max(nu_max))
        .chain(
            SWEEP_KAPPAS
                .iter()
                .map(|k| ControlParams::capped(target, k / horizon).with_nu_max(nu_max)),
        )
        .collect()
}

/// Outcome of the non-attainment diagnostic over one candidate class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// `φ` is constant: the two objectives coincide.
    Clean,
    /// `zZ_T` essentially never reaches `z_c(η_T)` and the gap vanishes.
    NoPressure,
    /// Every candidate keeps a significant pointwise gap.
    NotAttainedInClass,
    Inconclusive,
}

impl Verdict {
    pub fn message(&self) -> &'static str {
        match self {
            Verdict::Clean => "constant endowment: gap identically 0",
            Verdict::NoPressure => "no facelift pressure at this z",
            Verdict::NotAttainedInClass => "minimizer cannot be attained in this class",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonattainReport {
    pub horizon: f64,
    pub z: f64,
    pub candidates: Vec<CandidateRow>,
    /// Index of the candidate minimizing the plain objective.
    pub plain_argmin: usize,
    pub modified_argmin: usize,
    /// `min plain - min modified`.
    pub infima_gap: f64,
    pub infima_pooled_se: f64,
    /// `infima_gap ≤ 3 · infima_pooled_se`.
    pub infima_agree: bool,
    /// Every candidate has `gap > 3 SE`.
    pub all_gapped: bool,
    /// Smallest `z_c(η_T)` over the sampled factor values.
    pub z0: f64,
    pub verdict: Verdict,
    pub message: String,
}

/// Frequencies below this count as "never".
const NO_PRESSURE_FREQUENCY: f64 = 1e-3;

/// Runs the candidate sequence on one shared bundle and classifies the
/// outcome.
pub fn nonattainment_report(
    horizon: f64,
    z: f64,
    controls: &[ControlParams],
    model: &Model,
    bundle: &PathBundle,
) -> Result<NonattainReport> {
    require_positive("z", z)?;
    if controls.is_empty() {
        return Err(invalid("controls", "need at least one candidate"));
    }
    let mut candidates = Vec::with_capacity(controls.len());
    for c in controls {
        let samples = control_samples(horizon, c, model, bundle, z)?;
        let cmp = compare(&samples, model, z);
        candidates.push(CandidateRow {
            control: *c,
            plain: cmp.plain,
            modified: cmp.modified,
            gap: cmp.gap,
            frequency: cmp.frequency,
            pathwise_violations: cmp.violations,
        });
    }
    let argmin = |f: &dyn Fn(&CandidateRow) -> f64| {
        (0..candidates.len())
            .min_by(|&a, &b| f(&candidates[a]).total_cmp(&f(&candidates[b])))
            .unwrap()
    };
    let plain_argmin = argmin(&|r| r.plain.mean);
    let modified_argmin = argmin(&|r| r.modified.mean);
    let (p, m) = (
        &candidates[plain_argmin].plain,
        &candidates[modified_argmin].modified,
    );
    let infima_gap = p.mean - m.mean;
    let infima_pooled_se = pooled_se(p, m);
    let all_gapped = candidates.iter().all(|r| r.gap.mean > 3.0 * r.gap.std_err);

    let endow = &model.endowment;
    let z0 = essential_min_zc(model, bundle, horizon)?;
    let verdict = if endow.is_constant() {
        Verdict::Clean
    } else if all_gapped {
        Verdict::NotAttainedInClass
    } else if candidates
        .iter()
        .all(|r| r.frequency.mean < NO_PRESSURE_FREQUENCY && r.gap.mean <= 3.0 * r.gap.std_err)
    {
        Verdict::NoPressure
    } else {
        Verdict::Inconclusive
    };
    Ok(NonattainReport {
        horizon,
        z,
        candidates,
        plain_argmin,
        modified_argmin,
        infima_gap,
        infima_pooled_se,
        infima_agree: infima_gap <= 3.0 * infima_pooled_se,
        all_gapped,
        z0,
        verdict,
        message: verdict.message().to_string(),
    })
}

/// `min_i z_c(η_T^i)` over the paths of `bundle` under the reference measure.
fn essential_min_zc(model: &Model, bundle: &PathBundle, horizon: f64) -> Result<f64> {
    let steps = bundle
        .step_of(horizon)
        .ok_or_else(|| invalid("horizon", "not a grid time of the bundle"))?;
    let endow = &model.endowment;
    let u = model.utility;
    let full = steps == bundle.n_steps();
    Ok((0..bundle.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut w = bundle.driver(i, Driver::W);
            let wt = if full {
                w.terminal()
            } else {
                (0..steps).map(|_| w.next_increment()).sum()
            };
            let gap = endow.phi(endow.eta0() + wt) - endow.inf_phi();
            if gap > 0.0 {
                u.marginal(gap)
            } else {
                f64::INFINITY
            }
        })
        .reduce(|| f64::INFINITY, f64::min))
}

/// Outcome of the integrability check for `E[U'(φ(η_T) - inf φ)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Integrability {
    Finite {
        value: f64,
        coarse: f64,
        relative_difference: f64,
        error_estimate: f64,
    },
    Divergent {
        reason: String,
    },
    /// The two refinement levels disagree.
    Unresolved {
        coarse: f64,
        fine: f64,
    },
}

impl Integrability {
    pub fn is_finite(&self) -> bool {
        matches!(self, Integrability::Finite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub horizon: f64,
    pub result: Integrability,
    pub note: Option<String>,
}

/// Relative agreement required between the two refinement levels.
pub const QUADRATURE_AGREEMENT: f64 = 1e-4;

/// Decides whether `E[U'(φ(η₀ + W_T) - inf φ)]` is finite.
///
/// `U'(0+) = ∞` for every CRRA utility, so an infimum attained on a set of
/// positive length diverges. Isolated kinks where `φ - inf φ ~ c|η - η*|`
/// give the local integrand `|η - η*|^{p-1}`, integrable iff `p > 0`. The
/// remaining cases are integrated numerically at two refinement levels, with
/// panels split at the kinks and the Gaussian tails cut where the integrand
/// falls below `e^{-50}` of its scale.
pub fn marginal_integrability(
    endow: &EndowmentSpec,
    utility: UtilitySpec,
    horizon: f64,
) -> Result<IntegrabilityReport> {
    require_positive("horizon", horizon)?;
    utility.validate()?;
    let divergent = |reason: &str, note: Option<&str>| IntegrabilityReport {
        horizon,
        result: Integrability::Divergent {
            reason: reason.to_string(),
        },
        note: note.map(str::to_string),
    };
    if endow.is_constant() {
        return Ok(divergent(
            "inf phi attained everywhere",
            Some("constant endowment: the integrability condition is vacuous here"),
        ));
    }
    let kinks = match endow.inf_set() {
        InfSet::Attained { lo, hi } if hi > lo => {
            return Ok(divergent(
                "inf phi attained on a set of positive length",
                None,
            ));
        }
        InfSet::Attained { .. } => {
            if utility.exponent() <= 0.0 {
                return Ok(divergent(
                    "isolated minimizer with U'(x) ~ x^(p-1), p <= 0",
                    None,
                ));
            }
            endow.table_minimizers()
        }
        _ => Vec::new(),
    };
    // exponential growth rate of U'(φ - inf φ) in a logistic tail
    let rate = match endow.kind() {
        crate::market::PhiKind::Logistic { s, .. } => (1.0 - utility.exponent()) / s,
        crate::market::PhiKind::Table { .. } => 0.0,
    };
    let sd = horizon.sqrt();
    let half_width =
        |cut: f64| rate * horizon + (rate * rate * horizon * horizon + 2.0 * cut * horizon).sqrt();
    let coarse = integrate_panels(
        endow,
        utility,
        horizon,
        &kinks,
        half_width(50.0),
        4.0 * sd,
        1e-10,
    );
    let fine = integrate_panels(
        endow,
        utility,
        horizon,
        &kinks,
        half_width(80.0),
        1.0 * sd,
        1e-13,
    );
    let rel = (fine.0 - coarse.0).abs() / fine.0.abs().max(f64::MIN_POSITIVE);
    let result = if fine.0.is_finite() && rel < QUADRATURE_AGREEMENT {
        Integrability::Finite {
            value: fine.0,
            coarse: coarse.0,
            relative_difference: rel,
            error_estimate: fine.1,
        }
    } else {
        Integrability::Unresolved {
            coarse: coarse.0,
            fine: fine.0,
        }
    };
    Ok(IntegrabilityReport {
        horizon,
        result,
        note: None,
    })
}

/// `∫ U'(φ(η₀+y) - inf φ) N(y; 0, T) dy` over `|y - center| ≤ half_width`
/// on panels of at most `panel` length that break at every kink.
fn integrate_panels(
    endow: &EndowmentSpec,
    utility: UtilitySpec,
    horizon: f64,
    kinks: &[f64],
    half_width: f64,
    panel: f64,
    tol: f64,
) -> (f64, f64) {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * horizon).sqrt();
    let f = |y: f64| {
        let gap = endow.phi(endow.eta0() + y) - endow.inf_phi();
        if gap <= 0.0 {
            return 0.0;
        }
        utility.marginal(gap) * norm * (-0.5 * y * y / horizon).exp()
    };
    let (lo, hi) = (-half_width, half_width);
    let mut breaks: Vec<f64> = kinks
        .iter()
        .map(|k| k - endow.eta0())
        .filter(|&y| y > lo && y < hi)
        .collect();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        let pieces = ((w[1] - w[0]) / panel).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / pieces as f64;
        for j in 0..pieces {
            let out = quadrature::double_exponential::integrate(
                f,
                w[0] + h * j as f64,
                w[0] + h * (j + 1) as f64,
                tol,
            );
            total += out.integral;
            err += out.error_estimate;
        }
    }
    (total, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;

    fn logistic() -> EndowmentSpec {
        EndowmentSpec::logistic(0.0, 0.0, 2.0, 0.0, 1.0).unwrap()
    }

    fn model(endow: EndowmentSpec) -> Model {
        Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::from_lambda(0.3).unwrap(),
            endow,
        )
    }

    #[test]
    fn constant_endowment_objectives_coincide() {
        let m = model(EndowmentSpec::constant(0.0, 0.4).unwrap());
        let bundle = PathBundle::new(0.1, 8, 2000, 3).unwrap();
        let r = nonattainment_report(
            0.1,
            3.0,
            &[ControlParams::zero(), ControlParams::constant(0.5)],
            &m,
            &bundle,
        )
        .unwrap();
        for row in &r.candidates {
            assert_eq!(row.gap.mean, 0.0);
            assert_eq!(row.plain.mean, row.modified.mean);
        }
        assert_eq!(r.verdict, Verdict::Clean);
    }

    #[test]
    fn modified_objective_is_below_plain() {
        let m = model(logistic());
        let bundle = PathBundle::new(0.1, 16, 5000, 5).unwrap();
        for c in [
            ControlParams::zero(),
            ControlParams::push(-1.0, 5.0),
            ControlParams::split(0.4, -4.0, 40.0),
        ] {
            let r = nonattainment_report(0.1, 2.0, &[c], &m, &bundle).unwrap();
            let row = &r.candidates[0];
            assert!(row.plain.mean.is_finite());
            assert!(row.modified.mean <= row.plain.mean);
            assert_eq!(row.pathwise_violations, 0);
        }
    }

    #[test]
    fn small_z_has_no_pressure() {
        let m = model(logistic());
        let bundle = PathBundle::new(0.05, 8, 5000, 5).unwrap();
        let r = nonattainment_report(0.05, 0.05, &[ControlParams::zero()], &m, &bundle).unwrap();
        assert_eq!(r.verdict, Verdict::NoPressure);
        assert_eq!(r.candidates[0].gap.mean, 0.0);
    }

    #[test]
    fn integrability_verdicts() {
        let finite = marginal_integrability(
            &EndowmentSpec::logistic(0.0, 0.0, 1.0, 0.0, 1.0).unwrap(),
            UtilitySpec::Power(0.5),
            1.0,
        )
        .unwrap();
        assert!(finite.result.is_finite(), "{finite:?}");
        let flat =
            EndowmentSpec::table(0.0, vec![(-2.0, 1.0), (-1.0, 0.0), (0.0, 0.0), (1.0, 1.0)])
                .unwrap();
        for u in [
            UtilitySpec::Power(0.5),
            UtilitySpec::Log,
            UtilitySpec::Power(-1.0),
        ] {
            assert!(matches!(
                marginal_integrability(&flat, u, 1.0).unwrap().result,
                Integrability::Divergent { .. }
            ));
        }
        let constant = marginal_integrability(
            &EndowmentSpec::constant(0.0, 1.0).unwrap(),
            UtilitySpec::Log,
            1.0,
        )
        .unwrap();
        assert!(!constant.result.is_finite());
        assert!(constant.note.is_some());
        assert!(marginal_integrability(&flat, UtilitySpec::Log, 0.0).is_err());
    }

    #[test]
    fn isolated_kink_depends_on_exponent() {
        let kink = EndowmentSpec::table(0.3, vec![(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap();
        let r = marginal_integrability(&kink, UtilitySpec::Power(0.5), 0.5).unwrap();
        assert!(r.result.is_finite(), "{r:?}");
        let r = marginal_integrability(&kink, UtilitySpec::Log, 0.5).unwrap();
        assert!(!r.result.is_finite());
    }

    #[test]
    fn logistic_integral_against_closed_form_tail() {
        // φ - inf φ = 1/(1+e^{-y}) with p = 1/2: U'(x) = x^{-1/2}, and
        // E[(1+e^{-W})^{1/2}] computed by a plain midpoint rule
        let endow = EndowmentSpec::logistic(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        let r = marginal_integrability(&endow, UtilitySpec::Power(0.5), 1.0).unwrap();
        let Integrability::Finite { value, .. } = r.result else {
            panic!("{r:?}")
        };
        let n = 400_000;
        let (a, b) = (-30.0f64, 30.0f64);
        let h = (b - a) / n as f64;
        let mid: f64 = (0..n)
            .map(|i| {
                let y = a + h * (i as f64 + 0.5);
                (1.0 + (-y).exp()).sqrt() * (-0.5 * y * y).exp()
            })
            .sum::<f64>()
            * h
            / (2.0 * std::f64::consts::PI).sqrt();
        assert!((value - mid).abs() < 1e-8 * mid, "{value} vs {mid}");
    }
}
