//! Monte Carlo dual and primal objectives and the small-horizon study of the
//! dual value.

use serde::Serialize;

use crate::control::{ControlFamily, ControlParams, Feedback, DEFAULT_NU_MAX};
use crate::error::{invalid, require_positive, Result};
use crate::facelift::FaceliftEnvelope;
use crate::germ::push_targets;
use crate::market::{wealth_terminal, EndowmentSpec, Exposure, InfSet, PathBundle};
use crate::model::Model;
use crate::rng::{mix, Driver};
use crate::sim::{log_sum_exp, mix_log_density, ControlSamples};
use crate::stats::{par_mean_extended, Estimate, Welford};
use crate::utility::golden_argmin;

/// Value of the dual objective at one control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualEvalResult {
    pub horizon: f64,
    pub z: f64,
    pub control: ControlParams,
    /// Estimate of `E[V(zZ_T) + zZ_T φ(η_T)]`.
    pub estimate: Estimate,
    /// `V(z) + zφ(η₀)`.
    pub naive: f64,
    /// `V̲(z; φ(η₀), inf φ)`.
    pub facelift_target: f64,
}

/// `V(z) + zφ(η₀)` and `V̲(z; φ(η₀), inf φ)`.
pub fn reference_values(model: &Model, z: f64) -> Result<(f64, f64)> {
    require_positive("z", z)?;
    let endow = &model.endowment;
    let env = FaceliftEnvelope::new(model.utility, endow.phi0(), endow.inf_phi())?;
    Ok((model.naive_value(z), env.eval(z)?))
}

fn grid_steps(horizon: f64, bundle: &PathBundle) -> Result<usize> {
    bundle.step_of(horizon).ok_or_else(|| {
        invalid(
            "horizon",
            format!(
                "{horizon} is not a grid time of a bundle with horizon {}",
                bundle.horizon()
            ),
        )
    })
}

/// How the component densities combine into the candidate density.
pub(crate) enum Mixture {
    Weights(Vec<f64>),
    Capped(CapRule),
}

/// Path-dependent split of the capped family for one multiplier `z`.
///
/// `E[min(c, z_c(η_T)/z)]` is computed against a fine discretization of the
/// Gaussian law of `η_T`, sorted so that each path needs one binary search.
pub(crate) struct CapRule {
    z: f64,
    utility: crate::utility::UtilitySpec,
    endow: EndowmentSpec,
    /// Sorted `z_c(η_j)/z` at the nodes.
    levels: Vec<f64>,
    /// `Σ_{i<j} w_i` and `Σ_{i<j} w_i·level_i`.
    cum_w: Vec<f64>,
    cum_wl: Vec<f64>,
}

const CAP_NODES: usize = 4001;
const CAP_SPAN: f64 = 8.0;

impl CapRule {
    pub(crate) fn new(model: &Model, z: f64, horizon: f64) -> Self {
        let endow = model.endowment.clone();
        let sd = horizon.sqrt();
        let h = 2.0 * CAP_SPAN / (CAP_NODES - 1) as f64;
        let mut nodes: Vec<(f64, f64)> = (0..CAP_NODES)
            .map(|j| {
                let xi = -CAP_SPAN + h * j as f64;
                let w = (-0.5 * xi * xi).exp();
                let eta = endow.eta0() + sd * xi;
                (Self::level(model.utility, &endow, z, eta), w)
            })
            .collect();
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum_w = Vec::with_capacity(CAP_NODES + 1);
        let mut cum_wl = Vec::with_capacity(CAP_NODES + 1);
        let (mut sw, mut swl) = (0.0, 0.0);
        cum_w.push(0.0);
        cum_wl.push(0.0);
        for &(level, w) in &nodes {
            sw += w / total;
            if level.is_finite() {
                swl += w / total * level;
            }
            cum_w.push(sw);
            cum_wl.push(swl);
        }
        Self {
            z,
            utility: model.utility,
            levels: nodes.into_iter().map(|n| n.0).collect(),
            cum_w,
            cum_wl,
            endow,
        }
    }

    /// `z_c(η)/z`, infinite where `φ(η) = inf φ`.
    fn level(utility: crate::utility::UtilitySpec, endow: &EndowmentSpec, z: f64, eta: f64) -> f64 {
        let gap = endow.phi(eta) - endow.inf_phi();
        if gap <= 0.0 {
            f64::INFINITY
        } else {
            utility.marginal(gap) / z
        }
    }

    /// `E[min(c, z_c(η_T)/z)]`.
    fn conditional_mean(&self, c: f64) -> f64 {
        let k = self.levels.partition_point(|&l| l < c);
        self.cum_wl[k] + c * (1.0 - self.cum_w[k])
    }

    fn log_density(&self, log_z: [f64; 2], eta: f64) -> f64 {
        let z0 = log_z[0].exp();
        let cap = Self::level(self.utility, &self.endow, self.z, eta);
        let log_regular = log_z[0].min(cap.ln());
        let excess = (z0 - self.conditional_mean(z0)).max(0.0);
        log_sum_exp(log_regular, excess.ln() + log_z[1] - log_z[0])
    }
}

/// Paths for one dual candidate.
///
/// Sampling always mixes in the measure of `ν ≡ 0` with weight one half,
/// so that paths typical under the reference measure, where `V(zZ_T)` is
/// largest, stay represented whatever the target mixture is.
pub(crate) struct DualSamples {
    mixture: Mixture,
    sampling: Vec<f64>,
    samples: ControlSamples,
}

/// Simulates the paths of `control`; `z` is needed by multiplier-dependent
/// families only.
pub(crate) fn control_samples(
    horizon: f64,
    control: &ControlParams,
    model: &Model,
    bundle: &PathBundle,
    z: f64,
) -> Result<DualSamples> {
    control.validate()?;
    let steps = grid_steps(horizon, bundle)?;
    let eta0 = model.endowment.eta0();
    let (weights, mut feedbacks) = control.components(eta0);
    let (mixture, sampling) = if control.needs_multiplier() {
        (
            Mixture::Capped(CapRule::new(model, z, horizon)),
            vec![0.5, 0.5],
        )
    } else if feedbacks.len() == 2 {
        (Mixture::Weights(weights), vec![0.5, 0.5])
    } else if feedbacks[0] == Feedback::Constant(0.0) {
        (Mixture::Weights(weights.clone()), weights)
    } else {
        feedbacks.insert(0, Feedback::Constant(0.0));
        (Mixture::Weights(vec![0.0, 1.0]), vec![0.5, 0.5])
    };
    let samples = ControlSamples::generate(
        bundle,
        model.market.lambda(),
        eta0,
        &feedbacks,
        &sampling,
        steps,
    );
    Ok(DualSamples {
        mixture,
        sampling,
        samples,
    })
}

impl DualSamples {
    pub(crate) fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    /// Moments of `g(log Z, log Z_s, η) = F / Z_s`, with `Z` the candidate
    /// density and `Z_s` the sampling density, so that the first moment
    /// estimates `E[F]`. A non-finite path value makes every moment `+∞`.
    pub(crate) fn moments<const K: usize, G>(&self, mixture: &Mixture, g: G) -> [Estimate; K]
    where
        G: Fn(f64, f64, f64) -> [f64; K] + Sync,
    {
        let n = self.samples.components();
        let raw: [Welford; K] = self.samples.moments(&self.sampling, |log_z, log_s, eta| {
            let log_a = match mixture {
                Mixture::Weights(w) => mix_log_density(w, log_z, n),
                Mixture::Capped(rule) => rule.log_density(log_z, eta),
            };
            let v = g(log_a, log_s, eta);
            if v.iter().all(|x| x.is_finite()) {
                v
            } else {
                [f64::NAN; K]
            }
        });
        raw.map(|m| {
            let e = m.estimate();
            if e.mean.is_nan() {
                // a path value beyond f64 range: the objective is effectively +∞
                Estimate {
                    mean: f64::INFINITY,
                    std_err: f64::INFINITY,
                    n: m.count(),
                }
            } else {
                e
            }
        })
    }

    /// Dual objective for the density given by `mixture`.
    pub(crate) fn dual(&self, model: &Model, z: f64, mixture: &Mixture) -> Estimate {
        let u = model.utility;
        let endow = &model.endowment;
        let [m] = self.moments(mixture, |log_z, log_s, eta| {
            [u.v_scaled(z, log_z, log_s) + z * endow.phi(eta) * (log_z - log_s).exp()]
        });
        m
    }
}

/// Evaluates `E[V(zZ_T) + zZ_T φ(η_T)]` at one control.
pub fn dual_objective_mc(
    horizon: f64,
    z: f64,
    control: &ControlParams,
    model: &Model,
    bundle: &PathBundle,
) -> Result<DualEvalResult> {
    let (naive, facelift_target) = reference_values(model, z)?;
    let samples = control_samples(horizon, control, model, bundle, z)?;
    Ok(DualEvalResult {
        horizon,
        z,
        control: *control,
        estimate: samples.dual(model, z, samples.mixture()),
        naive,
        facelift_target,
    })
}

/// Search space for [`optimize_dual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualSearch {
    pub nu_max: f64,
    pub kappa_max: f64,
    /// Paths of the final evaluation.
    pub n_paths: usize,
    /// Paths used to rank candidates; the first `pilot_paths` of the full
    /// bundle.
    pub pilot_paths: usize,
    pub n_steps: usize,
}

impl Default for DualSearch {
    fn default() -> Self {
        Self {
            nu_max: DEFAULT_NU_MAX,
            kappa_max: 1e4,
            n_paths: 200_000,
            pilot_paths: 25_000,
            n_steps: 64,
        }
    }
}

impl DualSearch {
    /// Push strengths `c/T` for `c ∈ {4, 16, 64}`, capped by `kappa_max` and
    /// by one unit of `κΔt`.
    pub fn kappas(&self, horizon: f64) -> Vec<f64> {
        let cap = self.kappa_max.min(self.n_steps as f64 / horizon);
        let mut out: Vec<f64> = [4.0, 16.0, 64.0]
            .iter()
            .map(|c| (c / horizon).min(cap))
            .collect();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualOptimum {
    pub best: DualEvalResult,
    /// Best result per simulated candidate, in evaluation order.
    pub evaluations: Vec<DualEvalResult>,
}

/// Best mixture weight for a cached push sample; returns the control and
/// its estimate. The endpoints `a = 0` (pure push) and `a = 1` (`ν ≡ 0`)
/// are always compared.
fn best_split(
    model: &Model,
    z: f64,
    target: f64,
    kappa: f64,
    nu_max: f64,
    samples: &DualSamples,
) -> (ControlParams, Estimate) {
    let eval = |a: f64| samples.dual(model, z, &Mixture::Weights(vec![a, 1.0 - a]));
    let a_star = golden_argmin(|a| eval(a).mean, 0.0, 1.0, 20);
    let candidates = [
        (ControlParams::push(target, kappa), eval(0.0)),
        (ControlParams::zero(), eval(1.0)),
        (ControlParams::split(a_star, target, kappa), eval(a_star)),
    ];
    let (c, e) = candidates
        .into_iter()
        .filter(|(c, _)| !matches!(c.family, ControlFamily::Split { weight, .. } if !(weight > 0.0 && weight < 1.0)))
        .min_by(|x, y| x.1.mean.total_cmp(&y.1.mean))
        .unwrap();
    (c.with_nu_max(nu_max), e)
}

/// Minimizes the dual objective over constant, push and split controls with
/// common random numbers.
///
/// Each simulated push candidate `(η*, κ)` is paired with the zero control,
/// so the mixture weight is optimized on the cached sample at no extra
/// simulation cost. Candidates are simulated in a fixed order (zero, two
/// constants, the `push_targets × kappas` grid, then golden refinement of the
/// target) until `budget` simulations are spent.
///
/// Candidates are ranked on the pilot paths. The winner is then evaluated
/// afresh on the full bundle, which keeps the selection noise out of the
/// reported estimate, and compared there against `ν ≡ 0`.
pub fn optimize_dual(
    horizon: f64,
    z: f64,
    model: &Model,
    budget: usize,
    seed: u64,
    search: &DualSearch,
) -> Result<DualOptimum> {
    require_positive("z", z)?;
    if budget < 20 {
        return Err(invalid(
            "budget",
            format!("need at least 20 evaluations, got {budget}"),
        ));
    }
    let (naive, facelift_target) = reference_values(model, z)?;
    let pilot = search.pilot_paths.clamp(1, search.n_paths);
    let bundle = PathBundle::new(horizon, search.n_steps, pilot, seed)?;
    let endow = &model.endowment;
    let result = |control: ControlParams, estimate: Estimate| DualEvalResult {
        horizon,
        z,
        control,
        estimate,
        naive,
        facelift_target,
    };
    let mut evaluations = Vec::new();

    let mut fixed = vec![ControlParams::zero()];
    let down = match endow.inf_set() {
        InfSet::Asymptotic { direction } => -direction,
        _ => 1.0,
    };
    fixed.push(ControlParams::constant(0.5 * down));
    fixed.push(ControlParams::constant(2.0 * down));
    for c in fixed {
        let c = c.with_nu_max(search.nu_max);
        let s = control_samples(horizon, &c, model, &bundle, z)?;
        evaluations.push(result(c, s.dual(model, z, s.mixture())));
    }

    if !endow.is_constant() {
        let push_eval =
            |target: f64, kappa: f64, evaluations: &mut Vec<DualEvalResult>| -> Result<f64> {
                let c = ControlParams::split(0.5, target, kappa).with_nu_max(search.nu_max);
                let samples = control_samples(horizon, &c, model, &bundle, z)?;
                let (best, est) = best_split(model, z, target, kappa, search.nu_max, &samples);
                evaluations.push(result(best, est));
                Ok(est.mean)
            };
        let kappas = search.kappas(horizon);
        let targets = push_targets(endow);
        let mut grid_best = (f64::INFINITY, 0.0, 0.0);
        'grid: for &kappa in &kappas {
            for &target in &targets {
                if evaluations.len() >= budget {
                    break 'grid;
                }
                let v = push_eval(target, kappa, &mut evaluations)?;
                if v < grid_best.0 {
                    grid_best = (v, target, kappa);
                }
            }
        }
        if grid_best.0.is_finite() {
            let (_, target, kappa) = grid_best;
            let (mut lo, mut hi) = (target - 3.0, target + 3.0);
            const INV_PHI: f64 = 0.618_033_988_749_894_9;
            let mut a = hi - INV_PHI * (hi - lo);
            let mut b = lo + INV_PHI * (hi - lo);
            let (mut fa, mut fb) = (None, None);
            while evaluations.len() < budget {
                if fa.is_none() {
                    fa = Some(push_eval(a, kappa, &mut evaluations)?);
                    continue;
                }
                if fb.is_none() {
                    fb = Some(push_eval(b, kappa, &mut evaluations)?);
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
    let winner = evaluations
        .iter()
        .min_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean))
        .unwrap()
        .control;

    let full = PathBundle::new(horizon, search.n_steps, search.n_paths, seed)?;
    let zero = ControlParams::zero().with_nu_max(search.nu_max);
    let zero_samples = control_samples(horizon, &zero, model, &full, z)?;
    let mut best = result(zero, zero_samples.dual(model, z, zero_samples.mixture()));
    let (control, estimate) = match winner.family {
        ControlFamily::Split { target, kappa, .. } | ControlFamily::Push { target, kappa } => {
            let c = ControlParams::split(0.5, target, kappa).with_nu_max(search.nu_max);
            let samples = control_samples(horizon, &c, model, &full, z)?;
            best_split(model, z, target, kappa, search.nu_max, &samples)
        }
        _ => {
            let samples = control_samples(horizon, &winner, model, &full, z)?;
            (winner, samples.dual(model, z, samples.mixture()))
        }
    };
    if estimate.mean < best.estimate.mean {
        best = result(control, estimate);
    }
    Ok(DualOptimum { best, evaluations })
}

/// Primal value at one constant-exposure strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrimalEvalResult {
    pub horizon: f64,
    pub x: f64,
    pub exposure: Exposure,
    /// Estimate of `E[U(X_T + φ(η_T))]`; `-∞` as soon as one path is infeasible.
    pub estimate: Estimate,
    /// Paths with `X_T + φ(η_T) ≤ 0`.
    pub infeasible_paths: u64,
    /// Paths on which the wealth floor stopped trading.
    pub floor_breaches: usize,
}

/// Evaluates `E[U(X_T + φ(η_T))]` at one strategy.
pub fn primal_objective_mc(
    horizon: f64,
    x: f64,
    exposure: Exposure,
    model: &Model,
    bundle: &PathBundle,
) -> Result<PrimalEvalResult> {
    if (horizon - bundle.horizon()).abs() > 1e-12 * horizon.max(1.0) {
        return Err(invalid(
            "horizon",
            "primal evaluation needs the bundle horizon",
        ));
    }
    let wealth = wealth_terminal(&model.market, exposure, bundle, x);
    let u = model.utility;
    let endow = &model.endowment;
    let (estimate, infeasible_paths) = par_mean_extended(bundle.n_paths(), |i| {
        let eta = endow.eta0() + bundle.driver(i, Driver::W).terminal();
        let arg = wealth.terminal[i] + endow.phi(eta);
        if arg > 0.0 {
            u.eval_u(arg)
        } else {
            f64::NEG_INFINITY
        }
    });
    Ok(PrimalEvalResult {
        horizon,
        x,
        exposure,
        estimate,
        infeasible_paths,
        floor_breaches: wealth.floor_breaches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub horizon: f64,
    pub z: f64,
    pub control: ControlParams,
    pub value: Estimate,
    pub naive: f64,
    pub facelift_target: f64,
    /// `value - facelift_target`.
    pub gap_to_target: f64,
    /// `naive - value`.
    pub gap_to_naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Per `z`: whether `|value - target|` is nonincreasing along the
    /// decreasing horizons up to the pooled 95% half-width.
    pub monotone: Vec<(f64, bool)>,
}

/// Seed of cell `(z index, horizon index)`.
pub fn cell_seed(seed: u64, zi: usize, ti: usize) -> u64 {
    mix(seed ^ mix(((zi as u64) << 32) | ti as u64))
}

/// Optimized dual values over `z_list × horizons`, horizons strictly
/// decreasing.
pub fn convergence_table(
    z_list: &[f64],
    horizons: &[f64],
    model: &Model,
    budget: usize,
    seed: u64,
    search: &DualSearch,
) -> Result<ConvergenceTable> {
    if horizons.is_empty() || z_list.is_empty() {
        return Err(invalid("grid", "z list and horizon list must be nonempty"));
    }
    if horizons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("horizons", "must be strictly decreasing"));
    }
    let mut rows = Vec::new();
    let mut monotone = Vec::new();
    for (zi, &z) in z_list.iter().enumerate() {
        let mut prev: Option<(f64, f64)> = None;
        let mut ok = true;
        for (ti, &t) in horizons.iter().enumerate() {
            let opt = optimize_dual(t, z, model, budget, cell_seed(seed, zi, ti), search)?.best;
            let gap = opt.estimate.mean - opt.facelift_target;
            if let Some((g, hw)) = prev {
                if gap.abs() > g.abs() + hw.hypot(opt.estimate.half_width()) {
                    ok = false;
                }
            }
            prev = Some((gap, opt.estimate.half_width()));
            rows.push(ConvergenceRow {
                horizon: t,
                z,
                control: opt.control,
                value: opt.estimate,
                naive: opt.naive,
                facelift_target: opt.facelift_target,
                gap_to_target: gap,
                gap_to_naive: opt.naive - opt.estimate.mean,
            });
        }
        monotone.push((z, ok));
    }
    Ok(ConvergenceTable { rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;
    use crate::utility::UtilitySpec;

    fn model(lambda: f64, endow: EndowmentSpec) -> Model {
        Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::from_lambda(lambda).unwrap(),
            endow,
        )
    }

    #[test]
    fn identity_density_gives_naive_value() {
        let m = Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::new(1e-300, 1.0).unwrap(),
            EndowmentSpec::constant(0.0, 0.3).unwrap(),
        );
        let bundle = PathBundle::new(1.0, 4, 1000, 1).unwrap();
        let r = dual_objective_mc(1.0, 2.0, &ControlParams::zero(), &m, &bundle).unwrap();
        assert!((r.estimate.mean - (0.5 + 0.6)).abs() < 1e-12);
        assert!((r.naive - 1.1).abs() < 1e-12);
        assert_eq!(r.facelift_target, r.naive);
        assert!(dual_objective_mc(1.0, 0.0, &ControlParams::zero(), &m, &bundle).is_err());
    }

    #[test]
    fn lognormal_v_term() {
        // E[V(zZ)] = V(z)·E[Z⁻¹] = V(z)·exp(λ²T) for V(z) = 1/z
        let m = model(0.3, EndowmentSpec::constant(0.0, 1.0).unwrap());
        let bundle = PathBundle::new(0.5, 1, 200_000, 7).unwrap();
        let r = dual_objective_mc(0.5, 0.5, &ControlParams::zero(), &m, &bundle).unwrap();
        let exact = 2.0 * (0.09f64 * 0.5).exp() + 0.5;
        assert!(
            (r.estimate.mean - exact).abs() < 3.0 * r.estimate.half_width(),
            "{r:?}"
        );
    }

    #[test]
    fn primal_examples() {
        let m = model(0.3, EndowmentSpec::constant(0.0, 0.0).unwrap());
        let bundle = PathBundle::new(0.1, 4, 500, 3).unwrap();
        let r = primal_objective_mc(0.1, 1.0, Exposure::constant(0.0), &m, &bundle).unwrap();
        assert!((r.estimate.mean - 2.0).abs() < 1e-12);
        let flat = model(
            0.3,
            EndowmentSpec::table(0.0, vec![(-1.0, 0.0), (0.0, 0.0), (1.0, 1.0)]).unwrap(),
        );
        let r = primal_objective_mc(0.1, -0.01, Exposure::constant(0.0), &flat, &bundle).unwrap();
        assert_eq!(r.estimate.mean, f64::NEG_INFINITY);
        assert!(r.infeasible_paths > 0);
    }

    #[test]
    fn constant_endowment_optimum_is_zero_control_value() {
        let m = model(0.3, EndowmentSpec::constant(0.0, 0.7).unwrap());
        let search = DualSearch {
            n_paths: 5000,
            n_steps: 20,
            ..Default::default()
        };
        let opt = optimize_dual(0.1, 1.5, &m, 20, 4, &search).unwrap();
        let zero = &opt.evaluations[0];
        assert_eq!(
            opt.best.control,
            ControlParams::zero().with_nu_max(search.nu_max)
        );
        assert!((opt.best.estimate.mean - zero.estimate.mean).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(0.3, EndowmentSpec::constant(0.0, 0.7).unwrap());
        assert!(optimize_dual(0.1, 1.0, &m, 10, 1, &DualSearch::default()).is_err());
        assert!(optimize_dual(0.1, -1.0, &m, 20, 1, &DualSearch::default()).is_err());
        assert!(convergence_table(&[1.0], &[0.1, 0.2], &m, 20, 1, &DualSearch::default()).is_err());
    }
}
