//! Lower hedging germ prices.
//!
//! `Φ^E_T = inf_ν E[Z^ν_T φ(η_T)]` is estimated as `E^{Q^ν}[φ(η_T)]` along
//! controls from the constant/push/bang families. The American price is
//! replaced by its deterministic-time relaxation `min_{t ∈ grid} Φ^E_t`.

use serde::Serialize;

use crate::control::{ControlParams, DEFAULT_NU_MAX};
use crate::error::{invalid, Result};
use crate::market::{EndowmentSpec, InfSet, PathBundle};
use crate::sim::ControlSamples;
use crate::stats::Estimate;

/// Evaluates `E[Z^ν_T φ(η_T)]` at a grid time `horizon ≤ bundle.horizon()`.
pub fn germ_mc_estimate(
    horizon: f64,
    endow: &EndowmentSpec,
    control: &ControlParams,
    bundle: &PathBundle,
) -> Result<Estimate> {
    control.validate()?;
    if control.needs_multiplier() {
        return Err(invalid(
            "control",
            "capped controls are defined only for a dual multiplier",
        ));
    }
    let steps = bundle.step_of(horizon).ok_or_else(|| {
        invalid(
            "horizon",
            format!(
                "{horizon} is not a grid time of a bundle with horizon {}",
                bundle.horizon()
            ),
        )
    })?;
    let (weights, feedbacks) = control.components(endow.eta0());
    // λ does not enter E^Q[φ(η_T)]
    let samples = ControlSamples::generate(bundle, 0.0, endow.eta0(), &feedbacks, &weights, steps);
    let [m] = samples.moments(&weights, |_, _, eta| [endow.phi(eta)]);
    Ok(m.estimate())
}

/// Search space for [`optimize_germ`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GermSearch {
    pub nu_max: f64,
    pub kappa_max: f64,
    pub n_paths: usize,
    pub n_steps: usize,
}

impl Default for GermSearch {
    fn default() -> Self {
        Self {
            nu_max: DEFAULT_NU_MAX,
            kappa_max: 1e4,
            n_paths: 100_000,
            n_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GermOptimum {
    pub horizon: f64,
    pub control: ControlParams,
    pub estimate: Estimate,
    /// Every evaluated candidate in evaluation order.
    pub evaluations: Vec<(ControlParams, Estimate)>,
}

/// Candidate push targets in the direction of `inf φ`.
pub fn push_targets(endow: &EndowmentSpec) -> Vec<f64> {
    let eta0 = endow.eta0();
    match endow.inf_set() {
        InfSet::Everywhere => vec![eta0],
        InfSet::Asymptotic { direction } => [3.0, 6.0, 9.0]
            .iter()
            .map(|d| eta0 + direction * d)
            .collect(),
        InfSet::Attained { lo, hi } => {
            let centre = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => eta0,
            };
            vec![centre]
        }
    }
}

/// Log-spaced feedback strengths ending at `kappa_max`.
pub fn kappa_ladder(kappa_max: f64) -> Vec<f64> {
    (0..4).rev().map(|k| kappa_max / 10f64.powi(k)).collect()
}

/// Minimizes the germ estimate over push controls with common random numbers.
///
/// Candidates are evaluated in a fixed order: `ν ≡ 0`, then the grid
/// `push_targets × kappa_ladder`, then golden-section refinement of the
/// target at the best strength. A larger budget evaluates a superset of the
/// candidates of a smaller one, so the returned estimate is nonincreasing in
/// the budget.
pub fn optimize_germ(
    horizon: f64,
    endow: &EndowmentSpec,
    budget: usize,
    seed: u64,
    search: &GermSearch,
) -> Result<GermOptimum> {
    if budget < 20 {
        return Err(invalid(
            "budget",
            format!("need at least 20 evaluations, got {budget}"),
        ));
    }
    let bundle = PathBundle::new(horizon, search.n_steps, search.n_paths, seed)?;
    let mut evaluations: Vec<(ControlParams, Estimate)> = Vec::new();
    let eval =
        |c: ControlParams, evaluations: &mut Vec<(ControlParams, Estimate)>| -> Result<Estimate> {
            let e = germ_mc_estimate(horizon, endow, &c, &bundle)?;
            evaluations.push((c, e));
            Ok(e)
        };

    let with_clip = |c: ControlParams| c.with_nu_max(search.nu_max);
    eval(with_clip(ControlParams::zero()), &mut evaluations)?;
    if !endow.is_constant() {
        let targets = push_targets(endow);
        'grid: for &kappa in &kappa_ladder(search.kappa_max) {
            for &target in &targets {
                if evaluations.len() >= budget {
                    break 'grid;
                }
                eval(
                    with_clip(ControlParams::push(target, kappa)),
                    &mut evaluations,
                )?;
            }
        }
        // golden-section over the target at the best strength
        if let Some((best, _)) = best_of(&evaluations) {
            if let crate::control::ControlFamily::Push { target, kappa } = best.family {
                let (mut lo, mut hi) = (target - 3.0, target + 3.0);
                const INV_PHI: f64 = 0.618_033_988_749_894_9;
                let mut a = hi - INV_PHI * (hi - lo);
                let mut b = lo + INV_PHI * (hi - lo);
                let mut fa = None;
                let mut fb = None;
                while evaluations.len() < budget {
                    if fa.is_none() {
                        fa = Some(
                            eval(with_clip(ControlParams::push(a, kappa)), &mut evaluations)?.mean,
                        );
                        continue;
                    }
                    if fb.is_none() {
                        fb = Some(
                            eval(with_clip(ControlParams::push(b, kappa)), &mut evaluations)?.mean,
                        );
                        continue;
                    }
                    if fa < fb {
                        hi = b;
                        b = a;
                        fb = fa;
                        a = hi - INV_PHI * (hi - lo);
                        fa = None;
                    } else {
                        lo = a;
                        a = b;
                        fa = fb;
                        b = lo + INV_PHI * (hi - lo);
                        fb = None;
                    }
                }
            }
        }
    }
    let (control, estimate) = best_of(&evaluations).expect("at least one evaluation");
    Ok(GermOptimum {
        horizon,
        control,
        estimate,
        evaluations,
    })
}

fn best_of(evals: &[(ControlParams, Estimate)]) -> Option<(ControlParams, Estimate)> {
    evals
        .iter()
        .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .copied()
}

/// Push estimates along increasing `kappas` at a fixed target, on one bundle.
pub fn kappa_sweep(
    horizon: f64,
    endow: &EndowmentSpec,
    target: f64,
    kappas: &[f64],
    nu_max: f64,
    bundle: &PathBundle,
) -> Result<Vec<Estimate>> {
    kappas
        .iter()
        .map(|&k| {
            germ_mc_estimate(
                horizon,
                endow,
                &ControlParams::push(target, k).with_nu_max(nu_max),
                bundle,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetGridGerm {
    pub per_time: Vec<GermOptimum>,
    /// Grid time attaining the minimum.
    pub argmin: f64,
    pub estimate: Estimate,
}

/// `min_{t ∈ times} Φ^E_t`, each `Φ^E_t` optimized on its own bundle with
/// seed `seed + index`.
pub fn germ_a_detgrid(
    times: &[f64],
    endow: &EndowmentSpec,
    budget: usize,
    seed: u64,
    search: &GermSearch,
) -> Result<DetGridGerm> {
    if times.is_empty() {
        return Err(invalid("time grid", "must not be empty"));
    }
    if times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid("time grid", "times must be positive"));
    }
    let per_time = times
        .iter()
        .enumerate()
        .map(|(i, &t)| optimize_germ(t, endow, budget, seed.wrapping_add(i as u64), search))
        .collect::<Result<Vec<_>>>()?;
    let best = per_time
        .iter()
        .min_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean))
        .unwrap();
    Ok(DetGridGerm {
        argmin: best.horizon,
        estimate: best.estimate,
        per_time,
    })
}

/// Market regimes with a closed-form germ price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// Endowment spanned by the traded asset: `Φ = φ(η₀)`.
    Complete,
    /// Factor fully steerable by density controls: `Φ = inf φ`.
    Controllable,
}

pub fn germ_analytic(regime: Regime, endow: &EndowmentSpec) -> f64 {
    match regime {
        Regime::Complete => endow.phi0(),
        Regime::Controllable => endow.inf_phi(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate_paths;

    fn logistic() -> EndowmentSpec {
        EndowmentSpec::logistic(0.0, 0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn zero_control_logistic_symmetry() {
        let bundle = simulate_paths(1.0, 10, 100_000, 1).unwrap();
        let e = germ_mc_estimate(1.0, &logistic(), &ControlParams::zero(), &bundle).unwrap();
        assert!(
            (e.mean - 0.5).abs() < e.half_width().max(1e-12) * 1.5,
            "{e:?}"
        );
    }

    #[test]
    fn constant_endowment_is_exact() {
        let c = EndowmentSpec::constant(0.0, 0.7).unwrap();
        let bundle = simulate_paths(0.5, 20, 2000, 2).unwrap();
        for control in [
            ControlParams::zero(),
            ControlParams::push(-3.0, 50.0),
            ControlParams::bang(2.0, 4.0),
        ] {
            let e = germ_mc_estimate(0.5, &c, &control, &bundle).unwrap();
            assert!((e.mean - 0.7).abs() < 1e-12);
        }
        let opt = optimize_germ(
            0.5,
            &c,
            20,
            3,
            &GermSearch {
                n_paths: 500,
                n_steps: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((opt.estimate.mean - 0.7).abs() < 1e-12);
    }

    #[test]
    fn strong_push_drives_estimate_to_infimum() {
        // κ→∞ limit: η_T → η* deterministically, so the estimate tends to φ(-6)
        let bundle = simulate_paths(0.25, 400, 20_000, 4).unwrap();
        let e = germ_mc_estimate(
            0.25,
            &logistic(),
            &ControlParams::push(-6.0, 100.0),
            &bundle,
        )
        .unwrap();
        let limit = logistic().phi(-6.0);
        assert!(e.mean <= 0.1);
        assert!(e.mean >= limit);
    }

    #[test]
    fn rejects_off_grid_horizon_and_empty_time_grid() {
        let bundle = simulate_paths(1.0, 10, 10, 1).unwrap();
        assert!(germ_mc_estimate(0.55, &logistic(), &ControlParams::zero(), &bundle).is_err());
        assert!(germ_mc_estimate(2.0, &logistic(), &ControlParams::zero(), &bundle).is_err());
        assert!(germ_mc_estimate(0.5, &logistic(), &ControlParams::zero(), &bundle).is_ok());
        assert!(germ_a_detgrid(&[], &logistic(), 20, 1, &GermSearch::default()).is_err());
        assert!(optimize_germ(0.1, &logistic(), 5, 1, &GermSearch::default()).is_err());
    }

    #[test]
    fn analytic_values() {
        assert!((germ_analytic(Regime::Complete, &logistic()) - 0.5).abs() < 1e-15);
        assert_eq!(germ_analytic(Regime::Controllable, &logistic()), 0.0);
        let c = EndowmentSpec::constant(1.0, 2.5).unwrap();
        assert_eq!(germ_analytic(Regime::Complete, &c), 2.5);
        assert_eq!(germ_analytic(Regime::Controllable, &c), 2.5);
    }

    #[test]
    fn small_horizon_zero_control_tends_to_phi0() {
        let endow = EndowmentSpec::logistic(0.4, 0.0, 1.0, 0.0, 1.0).unwrap();
        let mut gaps = Vec::new();
        for t in [0.4, 0.1, 0.01] {
            let bundle = simulate_paths(t, 1, 50_000, 9).unwrap();
            let e = germ_mc_estimate(t, &endow, &ControlParams::zero(), &bundle).unwrap();
            gaps.push((e.mean - endow.phi0()).abs());
        }
        assert!(gaps[2] < gaps[0]);
        assert!(gaps[2] < 2e-3);
    }

    #[test]
    fn budget_monotonicity() {
        let search = GermSearch {
            n_paths: 4000,
            n_steps: 100,
            kappa_max: 1e3,
            ..Default::default()
        };
        let a = optimize_germ(0.1, &logistic(), 20, 5, &search).unwrap();
        let b = optimize_germ(0.1, &logistic(), 26, 5, &search).unwrap();
        assert!(b.estimate.mean <= a.estimate.mean);
        assert_eq!(&b.evaluations[..20], &a.evaluations[..]);
    }
}
