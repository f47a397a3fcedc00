//! Pass/fail rules shared by the acceptance suite and `report`.

use serde::{Deserialize, Serialize};

use facelift_core::stats::pooled_se;
use facelift_core::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u8, name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "criterion {} [{}] {}: {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub const CONJUGATE_REL_TOL: f64 = 1e-6;
pub const ENVELOPE_ABS_TOL: f64 = 1e-6;
pub const GERM_PUSH_MAX: f64 = 0.05;
pub const GERM_BANG_MAX: f64 = 0.15;
/// Share of the naive–facelift gap left at the smallest horizon.
pub const FACELIFT_GAP_SHARE: f64 = 0.25;
pub const CI_WIDTHS: f64 = 3.0;
pub const SE_MULTIPLE: f64 = 3.0;
pub const PDE_REL_TOL: f64 = 0.02;
pub const SLOPE_REL_TOL: f64 = 0.05;
pub const QUADRATURE_REL_TOL: f64 = 1e-4;

/// One optimized dual value of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub horizon: f64,
    pub z: f64,
    pub value: Estimate,
    pub naive: f64,
    pub facelift_target: f64,
}

/// Optimized push estimate, the κ sweep at its target and the best bang
/// estimate. The sweep must be nonincreasing up to the pooled 95%
/// half-width of neighbours.
pub fn germ_price(optimum: &Estimate, sweep: &[Estimate], bang: &Estimate) -> Verdict {
    let monotone = sweep
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + 1.96 * pooled_se(&w[0], &w[1]));
    let pass = optimum.mean <= GERM_PUSH_MAX && monotone && bang.mean <= GERM_BANG_MAX;
    let sweep_text = sweep
        .iter()
        .map(|e| format!("{:.3e}", e.mean))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        3,
        "germ price",
        pass,
        format!(
            "push optimum {:.3e} ± {:.1e} (≤ {GERM_PUSH_MAX}); κ sweep [{sweep_text}] monotone {monotone}; bang {:.3e} ± {:.1e} (≤ {GERM_BANG_MAX})",
            optimum.mean,
            optimum.half_width(),
            bang.mean,
            bang.half_width()
        ),
    )
}

/// Facelift convergence at a `z` above the critical point and at one below.
///
/// Above: each value is below naive by more than three CI widths, the values
/// are nonincreasing as the horizon shrinks (up to the pooled 95%
/// half-width), and the last gap to the facelift target is below a quarter
/// of the naive–facelift gap. Below: the gap to naive shrinks with the
/// horizon, and the linear extrapolation of the last two horizons to zero
/// covers the naive value within its 95% interval.
pub fn facelift_convergence(rows: &[ConvergencePoint], z_high: f64, z_low: f64) -> Verdict {
    const NAME: &str = "facelift convergence";
    let pick = |z: f64| {
        let mut r: Vec<&ConvergencePoint> =
            rows.iter().filter(|r| (r.z - z).abs() < 1e-12).collect();
        r.sort_by(|a, b| b.horizon.total_cmp(&a.horizon));
        r
    };
    let (high, low) = (pick(z_high), pick(z_low));
    if high.len() < 2 || low.len() < 2 {
        return Verdict::new(
            4,
            NAME,
            false,
            "need at least two horizons at both z values",
        );
    }
    let below_naive = high
        .iter()
        .all(|r| r.naive - r.value.mean > CI_WIDTHS * r.value.ci_width());
    let nonincreasing = high
        .windows(2)
        .all(|w| w[1].value.mean <= w[0].value.mean + 1.96 * pooled_se(&w[0].value, &w[1].value));
    let last = high.last().unwrap();
    let share =
        (last.value.mean - last.facelift_target).abs() / (last.naive - last.facelift_target);
    let gap = |r: &ConvergencePoint| (r.naive - r.value.mean).abs();
    let shrinking = low
        .windows(2)
        .all(|w| gap(w[1]) <= gap(w[0]) + 1.96 * pooled_se(&w[0].value, &w[1].value));
    let (a, b) = (low[low.len() - 2], low[low.len() - 1]);
    let (t1, t2) = (a.horizon, b.horizon);
    let extrapolated = b.value.mean - t2 * (a.value.mean - b.value.mean) / (t1 - t2);
    let se = ((t1 / (t1 - t2)) * b.value.std_err).hypot((t2 / (t1 - t2)) * a.value.std_err);
    let covers = (extrapolated - b.naive).abs() <= 1.96 * se;
    let pass = below_naive && nonincreasing && share < FACELIFT_GAP_SHARE && shrinking && covers;
    let values = |rs: &[&ConvergencePoint]| {
        rs.iter()
            .map(|r| format!("{:.5}", r.value.mean))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Verdict::new(
        4,
        NAME,
        pass,
        format!(
            "z={z_high}: [{}] below naive {below_naive}, nonincreasing {nonincreasing}, final gap share {share:.3} (< {FACELIFT_GAP_SHARE}); \
             z={z_low}: [{}] gap shrinking {shrinking}, extrapolated {extrapolated:.5} ± {:.5} vs naive {:.5}",
            values(&high),
            values(&low),
            1.96 * se,
            b.naive
        ),
    )
}

/// One weak-duality comparison: `primal - xz ≤ dual + 3 pooled SE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityCell {
    pub theta: f64,
    pub nu: f64,
    pub z: f64,
    pub primal_minus_xz: Estimate,
    pub dual: Estimate,
}

impl DualityCell {
    pub fn excess_in_se(&self) -> f64 {
        if self.primal_minus_xz.mean == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let d = self.primal_minus_xz.mean - self.dual.mean;
        d / pooled_se(&self.primal_minus_xz, &self.dual).max(f64::MIN_POSITIVE)
    }
}

pub fn weak_duality(cells: &[DualityCell]) -> Verdict {
    let worst = cells
        .iter()
        .map(DualityCell::excess_in_se)
        .fold(f64::NEG_INFINITY, f64::max);
    Verdict::new(
        5,
        "weak duality",
        !cells.is_empty() && worst <= SE_MULTIPLE,
        format!(
            "{} cells, max (primal - xz - dual)/SE = {worst:.3} (≤ {SE_MULTIPLE})",
            cells.len()
        ),
    )
}

/// One MC/PDE probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub horizon: f64,
    pub z: f64,
    pub mc: Estimate,
    pub pde: f64,
}

impl Probe {
    pub fn threshold(&self) -> f64 {
        (CI_WIDTHS * self.mc.ci_width()).max(PDE_REL_TOL * self.mc.mean.abs())
    }

    pub fn agrees(&self) -> bool {
        (self.pde - self.mc.mean).abs() <= self.threshold()
    }
}

pub fn cross_check(probes: &[Probe], slope: Option<(f64, f64)>) -> Verdict {
    let agree = probes.iter().filter(|p| p.agrees()).count();
    let worst = probes
        .iter()
        .map(|p| (p.pde - p.mc.mean).abs() / p.threshold())
        .fold(0.0, f64::max);
    let (slope_ok, slope_text) = match slope {
        Some((pde, germ)) => {
            let rel = (pde - germ).abs() / germ.abs();
            (
                rel <= SLOPE_REL_TOL,
                format!("slope {pde:.4e} vs germ {germ:.4e} (rel {rel:.3})"),
            )
        }
        None => (false, "no slope".to_string()),
    };
    Verdict::new(
        6,
        "MC/PDE cross-check",
        !probes.is_empty() && agree == probes.len() && slope_ok,
        format!(
            "{agree}/{} probes agree (worst diff/threshold {worst:.3}); {slope_text}",
            probes.len()
        ),
    )
}

/// The per-cell outcome of the non-attainment diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfimaCell {
    pub horizon: f64,
    pub z: f64,
    pub infima_gap: f64,
    pub infima_pooled_se: f64,
    pub infima_agree: bool,
    pub all_gapped: bool,
}

/// Equal infima everywhere, and a significant gap on every candidate for
/// `z > z_gapped`.
pub fn modified_objective(reports: &[InfimaCell], z_gapped: f64) -> Verdict {
    let agree = reports.iter().all(|r| r.infima_agree);
    let gapped = reports
        .iter()
        .filter(|r| r.z > z_gapped)
        .all(|r| r.all_gapped);
    let worst = reports
        .iter()
        .map(|r| r.infima_gap / r.infima_pooled_se)
        .fold(f64::NEG_INFINITY, f64::max);
    Verdict::new(
        7,
        "modified objective",
        !reports.is_empty() && agree && gapped,
        format!(
            "{} cells; infima agree {agree} (max gap/SE {worst:.3}); every candidate gapped for z > {z_gapped}: {gapped}",
            reports.len()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(horizon: f64, z: f64, mean: f64, naive: f64, target: f64) -> ConvergencePoint {
        ConvergencePoint {
            horizon,
            z,
            value: Estimate {
                mean,
                std_err: 1e-3,
                n: 1000,
            },
            naive,
            facelift_target: target,
        }
    }

    #[test]
    fn convergence_rule() {
        let mut rows: Vec<_> = [(0.2, 2.1), (0.1, 2.05), (0.05, 2.02)]
            .iter()
            .map(|&(t, v)| row(t, 2.0, v, 2.5, 2.0))
            .collect();
        rows.extend(
            [(0.2, 4.31), (0.1, 4.28), (0.05, 4.265)]
                .iter()
                .map(|&(t, v)| row(t, 0.25, v, 4.25, 4.25)),
        );
        assert!(facelift_convergence(&rows, 2.0, 0.25).pass);
        rows[2].value.mean = 2.2;
        assert!(!facelift_convergence(&rows, 2.0, 0.25).pass);
    }

    #[test]
    fn probe_threshold_uses_larger_tolerance() {
        let p = Probe {
            horizon: 0.1,
            z: 2.0,
            mc: Estimate {
                mean: 2.0,
                std_err: 1e-4,
                n: 10,
            },
            pde: 2.03,
        };
        assert!((p.threshold() - 0.04).abs() < 1e-12);
        assert!(p.agrees());
    }
}
