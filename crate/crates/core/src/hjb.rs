//! Dual HJB solver on an `(η, log z)` grid.
//!
//! The unknown is `w = v/z`. One step of length `Δ` uses the dynamic
//! programming identity
//!
//! ```text
//! v(T+Δ, η, z) = min_ν E[ v(T, η + ΔW, z·Z_Δ) ],   Z_Δ = exp(-λΔB - νΔW - (λ²+ν²)Δ/2),
//! ```
//!
//! with `ν` frozen over the step. Dividing by `z` and passing to the measure
//! with density `Z_Δ` turns the expectation into
//!
//! ```text
//! w(T+Δ, η, y) = min_ν E[ w(T, η - νΔ + √Δ ξ, y + (λ²+ν²)Δ/2 - ν√Δ ξ - λ√Δ ξ') ]
//! ```
//!
//! for independent standard normals `ξ, ξ'`. The `λ` part and the `ν` part
//! are applied in sequence. `w` is split as `B_T(y) + r`, where `B_T` is the
//! uncontrolled solution started from `V(z)/z`; its expectation is known in
//! closed form for every `ν`, so the steep small-`z` part is never
//! interpolated. The residual `r` is integrated with five-point Gauss-Hermite
//! quadrature and bicubic interpolation. The `η` shift `-νΔ` is exact, so
//! large clipped controls move the factor as far as they do in continuous
//! time, and the scheme has no step-size restriction.
//!
//! Outside the grid, `r` is held constant in `η` and below `log z_min`.
//! Above `log z_max` it relaxes like `1/z` toward its large-`z` limit, the
//! clipped germ recursion `G(T+Δ, η) = min_ν E[G(T, η - νΔ + √Δ ξ)]` from
//! `G(0) = φ`, marched on the same `η` nodes. `z·r` is then asymptotically
//! linear in `z`, the condition `v_zz = 0` at the upper edge.
//!
//! Switching between discrete control candidates at neighbouring nodes
//! leaves odd-even dents in `z`. After each step every `η` row of `v` is
//! replaced by its lower convex hull in `z`; nodes already on the hull are
//! not touched.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::NU_MAX_LIMIT;
use crate::error::{invalid, require_positive, Error, Result};
use crate::facelift::FaceliftEnvelope;
use crate::model::Model;
use crate::utility::UtilitySpec;

/// Probabilists' Gauss-Hermite rule with five nodes.
const GH_NODES: [f64; 5] = [
    -2.856970013872806,
    -1.355626179974266,
    0.0,
    1.355626179974266,
    2.856970013872806,
];
const GH_WEIGHTS: [f64; 5] = [
    0.01125741132772069,
    0.2220759220056126,
    0.5333333333333333,
    0.2220759220056126,
    0.01125741132772069,
];

/// Number of nonzero magnitudes on the fixed control ladder.
const LADDER_RUNGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HjbGrid {
    pub eta_min: f64,
    pub eta_max: f64,
    pub n_eta: usize,
    pub log_z_min: f64,
    pub log_z_max: f64,
    pub n_z: usize,
    pub dt: f64,
    pub t_max: f64,
    pub nu_max: f64,
    /// Tolerance of the convexity monitor on `z²v_zz`, relative to `1 + |v|`.
    pub eps_zz: f64,
}

impl HjbGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eta_range: (f64, f64),
        n_eta: usize,
        log_z_range: (f64, f64),
        n_z: usize,
        dt: f64,
        t_max: f64,
        nu_max: f64,
        eps_zz: f64,
    ) -> Result<Self> {
        let grid = Self {
            eta_min: eta_range.0,
            eta_max: eta_range.1,
            n_eta,
            log_z_min: log_z_range.0,
            log_z_max: log_z_range.1,
            n_z,
            dt,
            t_max,
            nu_max,
            eps_zz,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta_min.is_finite() || !self.eta_max.is_finite() || self.eta_min >= self.eta_max {
            return Err(invalid(
                "eta range",
                format!(
                    "need eta_min < eta_max, got [{}, {}]",
                    self.eta_min, self.eta_max
                ),
            ));
        }
        if !self.log_z_min.is_finite()
            || !self.log_z_max.is_finite()
            || self.log_z_min >= self.log_z_max
        {
            return Err(invalid(
                "log z range",
                format!(
                    "need log_z_min < log_z_max, got [{}, {}]",
                    self.log_z_min, self.log_z_max
                ),
            ));
        }
        if self.n_eta < 4 || self.n_z < 4 {
            return Err(invalid("grid", "need at least 4 nodes per axis"));
        }
        require_positive("dt", self.dt)?;
        require_positive("t_max", self.t_max)?;
        require_positive("nu_max", self.nu_max)?;
        require_positive("eps_zz", self.eps_zz)?;
        if self.nu_max > NU_MAX_LIMIT {
            return Err(invalid(
                "nu_max",
                format!("{} exceeds the bound {NU_MAX_LIMIT}", self.nu_max),
            ));
        }
        let steps = self.t_max / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(invalid(
                "dt",
                format!(
                    "t_max = {} is not a multiple of dt = {}",
                    self.t_max, self.dt
                ),
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn d_eta(&self) -> f64 {
        (self.eta_max - self.eta_min) / (self.n_eta - 1) as f64
    }

    pub fn d_log_z(&self) -> f64 {
        (self.log_z_max - self.log_z_min) / (self.n_z - 1) as f64
    }

    pub fn eta(&self, i: usize) -> f64 {
        self.eta_min + self.d_eta() * i as f64
    }

    pub fn log_z(&self, j: usize) -> f64 {
        self.log_z_min + self.d_log_z() * j as f64
    }

    /// Step index of `t`, if `t` is a grid time.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let k = t / self.dt;
        let r = k.round();
        ((k - r).abs() < 1e-9 * k.max(1.0) && r >= 0.0 && r as usize <= self.n_steps())
            .then_some(r as usize)
    }
}

/// The solution at one saved time, stored row-major with `η` outer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbSlice {
    pub t: f64,
    pub v: Vec<f64>,
    /// Minimizing control of the last step (zero at `t = 0`).
    pub nu_star: Vec<f64>,
    /// Nodes where `z²v_zz < -eps_zz·(1 + |v|)`.
    pub floor_active: Vec<bool>,
}

impl HjbSlice {
    pub fn floor_count(&self) -> usize {
        self.floor_active.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbSolution {
    pub grid: HjbGrid,
    pub slices: Vec<HjbSlice>,
}

impl HjbSolution {
    pub fn slice(&self, t: f64) -> Result<&HjbSlice> {
        let k = self
            .grid
            .step_of(t)
            .ok_or_else(|| invalid("t", format!("{t} is not a grid time")))?;
        self.slices
            .iter()
            .find(|s| self.grid.step_of(s.t) == Some(k))
            .ok_or_else(|| invalid("t", format!("no slice saved at {t}")))
    }

    /// `v(t, η, z)` by bicubic interpolation inside the grid.
    pub fn value(&self, t: f64, eta: f64, z: f64) -> Result<f64> {
        require_positive("z", z)?;
        let g = &self.grid;
        let y = z.ln();
        if eta < g.eta_min || eta > g.eta_max || y < g.log_z_min || y > g.log_z_max {
            return Err(invalid(
                "probe",
                format!("(eta, z) = ({eta}, {z}) lies outside the grid"),
            ));
        }
        let s = self.slice(t)?;
        let w: Vec<f64> =
            s.v.iter()
                .enumerate()
                .map(|(k, v)| v * (-g.log_z(k % g.n_z)).exp())
                .collect();
        Ok(z * bicubic(g, &w, eta, y))
    }

    /// `(v(t, η, z_max) - v(t, η, z_max/2)) / (z_max/2)`.
    pub fn large_z_slope(&self, t: f64, eta: f64) -> Result<f64> {
        let z_max = self.grid.log_z_max.exp();
        Ok((self.value(t, eta, z_max)? - self.value(t, eta, 0.5 * z_max)?) / (0.5 * z_max))
    }

    /// Floor activations farther than `margin` nodes from both `z` edges.
    pub fn interior_floor_count(&self, t: f64, margin: usize) -> Result<usize> {
        let s = self.slice(t)?;
        let n_z = self.grid.n_z;
        Ok(s.floor_active
            .iter()
            .enumerate()
            .filter(|&(k, &b)| b && (k % n_z) >= margin && (k % n_z) + margin < n_z)
            .count())
    }
}

/// Marches the dual HJB forward from the naive condition `V(z) + zφ(η)`,
/// saving the solution at `t = 0` and at every time in `save_times`.
pub fn solve_dual_hjb(grid: &HjbGrid, model: &Model, save_times: &[f64]) -> Result<HjbSolution> {
    grid.validate()?;
    model.utility.validate()?;
    let mut save_steps = Vec::with_capacity(save_times.len());
    for &t in save_times {
        let k = grid.step_of(t).ok_or_else(|| {
            invalid(
                "save time",
                format!("{t} is not a grid time in [0, {}]", grid.t_max),
            )
        })?;
        save_steps.push(k);
    }
    let u = model.utility;
    let endow = &model.endowment;
    let lambda = model.market.lambda();
    let (n_eta, n_z) = (grid.n_eta, grid.n_z);
    let mut base = Base::new(u);
    let mut r: Vec<f64> = (0..n_eta * n_z)
        .map(|k| endow.phi(grid.eta(k / n_z)))
        .collect();
    // large-z limit of r: the germ recursion with clipped controls
    let mut far: Vec<f64> = (0..n_eta).map(|i| endow.phi(grid.eta(i))).collect();
    let mut nu = vec![0.0; r.len()];
    let mut slices = vec![make_slice(grid, 0.0, &base, &r, &nu)];
    let last = save_steps.iter().copied().max().unwrap_or(0);
    let ladder = nu_ladder(grid.nu_max);
    let sd = grid.dt.sqrt();
    let mut half = vec![0.0; r.len()];

    for step in 1..=last {
        // market-price-of-risk part: a shift in log z only
        let drift = 0.5 * lambda * lambda * grid.dt;
        half.par_chunks_mut(n_z).enumerate().for_each(|(i, row)| {
            let eta = grid.eta(i);
            for (j, out) in row.iter_mut().enumerate() {
                let y = grid.log_z(j) + drift;
                *out = GH_NODES
                    .iter()
                    .zip(GH_WEIGHTS)
                    .map(|(x, g)| g * sample(grid, &r, &far, eta, y - lambda * sd * x))
                    .sum();
            }
        });
        let lifted = base.advance(lambda * lambda * grid.dt);
        // control part; the base term is exact and its ν = 0 value is
        // carried by `lifted`
        let half_ref = &half;
        let (de, dy) = (grid.d_eta(), grid.d_log_z());
        r.par_chunks_mut(n_z)
            .zip(nu.par_chunks_mut(n_z))
            .enumerate()
            .for_each(|(i, (row, nu_row))| {
                let eta = grid.eta(i);
                let (up, down) = ((i + 1).min(n_eta - 1), i.saturating_sub(1));
                let span_e = (up - down) as f64 * de;
                let at = |a: usize, b: usize| half_ref[a * n_z + b];
                for j in 0..n_z {
                    let y = grid.log_z(j);
                    let (right, left) = ((j + 1).min(n_z - 1), j.saturating_sub(1));
                    let span_y = (right - left) as f64 * dy;
                    // pointwise minimizer of the quadratic Hamiltonian
                    let w_e = (at(up, j) - at(down, j)) / span_e;
                    let w_ey = (at(up, right) - at(up, left) - at(down, right) + at(down, left))
                        / (span_e * span_y);
                    let r_y = (at(i, right) - at(i, left)) / span_y;
                    let r_yy = if j == 0 || j + 1 == n_z {
                        0.0
                    } else {
                        (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (dy * dy)
                    };
                    let curv = (lifted.curvature(y) + r_y + r_yy).max(grid.eps_zz);
                    let local = ((w_e + w_ey) / curv).clamp(-grid.nu_max, grid.nu_max);
                    let cost = |n: f64| {
                        let drift_eta = eta - n * grid.dt;
                        let drift_y = y + 0.5 * n * n * grid.dt;
                        lifted.excess(y, n * n * grid.dt)
                            + GH_NODES
                                .iter()
                                .zip(GH_WEIGHTS)
                                .map(|(x, g)| {
                                    g * sample(
                                        grid,
                                        half_ref,
                                        &far,
                                        drift_eta + sd * x,
                                        drift_y - n * sd * x,
                                    )
                                })
                                .sum::<f64>()
                    };
                    let (best, val) = minimize_over(&ladder, local, grid.nu_max, cost);
                    row[j] = val;
                    nu_row[j] = best;
                }
                convexify_row(grid, &lifted, row);
            });
        base = lifted;
        far = (0..n_eta)
            .map(|i| {
                let eta = grid.eta(i);
                ladder
                    .iter()
                    .map(|n| {
                        GH_NODES
                            .iter()
                            .zip(GH_WEIGHTS)
                            .map(|(x, g)| g * cubic_eta(grid, &far, eta - n * grid.dt + sd * x))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        if let Some(k) = r.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at step {step}, node (eta = {}, log z = {})",
                grid.eta(k / n_z),
                grid.log_z(k % n_z)
            )));
        }
        if save_steps.contains(&step) {
            slices.push(make_slice(grid, step as f64 * grid.dt, &base, &r, &nu));
        }
    }
    Ok(HjbSolution {
        grid: *grid,
        slices,
    })
}

/// `max |v - V̲(z; φ(η), Φ)| / (1 + |V̲|)` over grid nodes with `η` and `z`
/// inside the given windows.
pub fn facelift_distance(
    solution: &HjbSolution,
    t: f64,
    model: &Model,
    germ: f64,
    eta_window: (f64, f64),
    z_window: (f64, f64),
) -> Result<f64> {
    let s = solution.slice(t)?;
    let g = &solution.grid;
    let mut worst: f64 = 0.0;
    for i in 0..g.n_eta {
        let eta = g.eta(i);
        if eta < eta_window.0 || eta > eta_window.1 {
            continue;
        }
        let env = FaceliftEnvelope::new(model.utility, model.endowment.phi(eta), germ)?;
        for j in 0..g.n_z {
            let z = g.log_z(j).exp();
            if z < z_window.0 || z > z_window.1 {
                continue;
            }
            let target = env.eval(z)?;
            worst = worst.max((s.v[i * g.n_z + j] - target).abs() / (1.0 + target.abs()));
        }
    }
    Ok(worst)
}

/// The uncontrolled part `B_T(y)` of `w`, started from `V(z)/z`.
#[derive(Debug, Clone, Copy)]
enum Base {
    /// `a·(1-p)/p·e^{(q-1)y}` with `q = p/(p-1)`.
    Power { p: f64, a: f64 },
    /// `(c - 1 - y)·e^{-y}`.
    Log { c: f64 },
}

impl Base {
    fn new(u: UtilitySpec) -> Self {
        match u {
            UtilitySpec::Power(p) => Base::Power { p, a: 1.0 },
            UtilitySpec::Log => Base::Log { c: 0.0 },
        }
    }

    #[inline]
    fn eval(&self, y: f64) -> f64 {
        match *self {
            Base::Power { p, a } => {
                let q = p / (p - 1.0);
                a * (1.0 - p) / p * ((q - 1.0) * y).exp()
            }
            Base::Log { c } => (c - 1.0 - y) * (-y).exp(),
        }
    }

    /// `E[B(y + s²/2 - sξ)] - B(y)` for `s² = var`.
    #[inline]
    fn excess(&self, y: f64, var: f64) -> f64 {
        match *self {
            Base::Power { p, .. } => {
                let q = p / (p - 1.0);
                self.eval(y) * (0.5 * q * (q - 1.0) * var).exp_m1()
            }
            Base::Log { .. } => 0.5 * var * (-y).exp(),
        }
    }

    /// `B_y + B_yy`, which is `z·∂²(zB)/∂z²`.
    #[inline]
    fn curvature(&self, y: f64) -> f64 {
        match *self {
            Base::Power { p, .. } => {
                let q = p / (p - 1.0);
                self.eval(y) * q * (q - 1.0)
            }
            Base::Log { .. } => (-y).exp(),
        }
    }

    /// The base after a log-z diffusion of variance `var`.
    fn advance(&self, var: f64) -> Self {
        match *self {
            Base::Power { p, a } => {
                let q = p / (p - 1.0);
                Base::Power {
                    p,
                    a: a * (0.5 * q * (q - 1.0) * var).exp(),
                }
            }
            Base::Log { c } => Base::Log { c: c + 0.5 * var },
        }
    }
}

fn make_slice(grid: &HjbGrid, t: f64, base: &Base, r: &[f64], nu: &[f64]) -> HjbSlice {
    let n_z = grid.n_z;
    let v: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let y = grid.log_z(k % n_z);
            (base.eval(y) + x) * y.exp()
        })
        .collect();
    let floor_active = (0..v.len())
        .map(|k| {
            let j = k % n_z;
            if j == 0 || j + 1 == n_z {
                return false;
            }
            // divided differences in z are exact on the affine part `a + bz`
            let (zm, z, zp) = (
                grid.log_z(j - 1).exp(),
                grid.log_z(j).exp(),
                grid.log_z(j + 1).exp(),
            );
            let v_zz =
                2.0 * ((v[k + 1] - v[k]) / (zp - z) - (v[k] - v[k - 1]) / (z - zm)) / (zp - zm);
            z * z * v_zz < -grid.eps_zz * (1.0 + v[k].abs())
        })
        .collect();
    HjbSlice {
        t,
        v,
        nu_star: nu.to_vec(),
        floor_active,
    }
}

/// Replaces `v = z(B + r)` along one `η` row by its lower convex hull in `z`.
/// Nodes on the hull are left untouched.
fn convexify_row(grid: &HjbGrid, base: &Base, row: &mut [f64]) {
    let n = row.len();
    let z: Vec<f64> = (0..n).map(|j| grid.log_z(j).exp()).collect();
    let v: Vec<f64> = (0..n)
        .map(|j| (base.eval(grid.log_z(j)) + row[j]) * z[j])
        .collect();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a–j
            if (v[b] - v[a]) * (z[j] - z[a]) >= (v[j] - v[a]) * (z[b] - z[a]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for j in a + 1..b {
            let chord = v[a] + (v[b] - v[a]) * (z[j] - z[a]) / (z[b] - z[a]);
            if v[j] - chord > 1e-13 * (1.0 + v[j].abs()) {
                row[j] = chord / z[j] - base.eval(grid.log_z(j));
            }
        }
    }
}

/// Fixed control candidates: `0` and `±ν_max·4^{-k}` for `k < LADDER_RUNGS`.
fn nu_ladder(nu_max: f64) -> Vec<f64> {
    let mut ladder = vec![0.0];
    for k in 0..LADDER_RUNGS {
        let n = nu_max / 4f64.powi(k as i32);
        ladder.push(n);
        ladder.push(-n);
    }
    ladder
}

/// Minimizes `cost` over the ladder and around the local minimizer `local`.
/// Ties keep the earlier candidate, so `ν = 0` wins when nothing helps.
fn minimize_over(ladder: &[f64], local: f64, nu_max: f64, cost: impl Fn(f64) -> f64) -> (f64, f64) {
    let around = [local, 0.5 * local, (2.0 * local).clamp(-nu_max, nu_max)];
    let mut best = (0.0, f64::INFINITY);
    for &n in ladder.iter().chain(&around) {
        let c = cost(n);
        if c < best.1 {
            best = (n, c);
        }
    }
    best
}

#[inline]
fn lagrange4(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// First stencil index and local coordinate for position `s` in node units.
#[inline]
fn stencil(s: f64, n: usize) -> (usize, f64) {
    let i0 = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    (i0, s - i0 as f64)
}

/// Bicubic Lagrange interpolation of grid data at an in-range point.
#[inline]
pub(crate) fn bicubic(g: &HjbGrid, w: &[f64], eta: f64, y: f64) -> f64 {
    let (i0, xe) = stencil((eta - g.eta_min) / g.d_eta(), g.n_eta);
    let (j0, xy) = stencil((y - g.log_z_min) / g.d_log_z(), g.n_z);
    let (le, ly) = (lagrange4(xe), lagrange4(xy));
    let mut acc = 0.0;
    for (a, wa) in le.iter().enumerate() {
        let row = &w[(i0 + a) * g.n_z + j0..(i0 + a) * g.n_z + j0 + 4];
        acc += wa * (ly[0] * row[0] + ly[1] * row[1] + ly[2] * row[2] + ly[3] * row[3]);
    }
    acc
}

/// 1-d cubic interpolation of a row over the `η` nodes, clamped at the ends.
#[inline]
fn cubic_eta(g: &HjbGrid, row: &[f64], eta: f64) -> f64 {
    let (i0, x) = stencil(
        (eta.clamp(g.eta_min, g.eta_max) - g.eta_min) / g.d_eta(),
        g.n_eta,
    );
    let l = lagrange4(x);
    l[0] * row[i0] + l[1] * row[i0 + 1] + l[2] * row[i0 + 2] + l[3] * row[i0 + 3]
}

/// Residual at an arbitrary point, with the extrapolation rules of the
/// module; `far` is the large-`z` limit of the residual on the `η` nodes.
#[inline]
fn sample(g: &HjbGrid, r: &[f64], far: &[f64], eta: f64, y: f64) -> f64 {
    let eta = eta.clamp(g.eta_min, g.eta_max);
    if y <= g.log_z_max {
        return bicubic(g, r, eta, y.max(g.log_z_min));
    }
    let limit = cubic_eta(g, far, eta);
    limit + (bicubic(g, r, eta, g.log_z_max) - limit) * (g.log_z_max - y).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{EndowmentSpec, MarketParams};

    fn grid(nu_max: f64, t_max: f64, dt: f64) -> HjbGrid {
        HjbGrid::new(
            (-6.0, 6.0),
            49,
            ((0.05f64).ln(), (50.0f64).ln()),
            61,
            dt,
            t_max,
            nu_max,
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(HjbGrid::new((1.0, 0.0), 10, (0.0, 1.0), 10, 0.1, 1.0, 10.0, 1e-6).is_err());
        assert!(HjbGrid::new((0.0, 1.0), 3, (0.0, 1.0), 10, 0.1, 1.0, 10.0, 1e-6).is_err());
        assert!(HjbGrid::new((0.0, 1.0), 10, (0.0, 1.0), 10, 0.3, 1.0, 10.0, 1e-6).is_err());
        assert!(HjbGrid::new((0.0, 1.0), 10, (0.0, 1.0), 10, 0.1, 1.0, 1e7, 1e-6).is_err());
        let g = grid(10.0, 0.1, 0.01);
        assert_eq!(g.n_steps(), 10);
        assert_eq!(g.step_of(0.05), Some(5));
        assert_eq!(g.step_of(0.055), None);
    }

    #[test]
    fn constant_endowment_without_drift_is_stationary() {
        let m = Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::new(1e-300, 1.0).unwrap(),
            EndowmentSpec::constant(0.0, 0.7).unwrap(),
        );
        let g = grid(10.0, 0.1, 0.01);
        let sol = solve_dual_hjb(&g, &m, &[0.1]).unwrap();
        let (s0, s1) = (&sol.slices[0], &sol.slices[1]);
        for (a, b) in s0.v.iter().zip(&s1.v) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_endowment_tracks_lognormal_scaling() {
        // with φ ≡ c the optimal control is 0 and v = V(z)e^{λ²T} + cz
        let m = Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::from_lambda(0.5).unwrap(),
            EndowmentSpec::constant(0.0, 0.7).unwrap(),
        );
        let g = grid(10.0, 0.2, 0.01);
        let sol = solve_dual_hjb(&g, &m, &[0.2]).unwrap();
        for z in [0.5, 1.0, 3.0] {
            let exact = (0.25f64 * 0.2).exp() / z + 0.7 * z;
            let got = sol.value(0.2, 0.0, z).unwrap();
            assert!(
                (got - exact).abs() < 1e-4 * exact,
                "z={z}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn facelift_lowers_value_above_critical_point() {
        let m = Model::new(
            UtilitySpec::Power(0.5),
            MarketParams::from_lambda(0.3).unwrap(),
            EndowmentSpec::logistic(0.0, 0.0, 2.0, 0.0, 1.0).unwrap(),
        );
        let g = grid(100.0, 0.05, 0.0025);
        let sol = solve_dual_hjb(&g, &m, &[0.05]).unwrap();
        let low = sol.value(0.05, 0.0, 0.25).unwrap();
        assert!((low - 4.25).abs() < 0.02 * 4.25, "{low}");
        let high = sol.value(0.05, 0.0, 2.0).unwrap();
        assert!(high < 2.5 - 0.05 * 0.5, "{high}");
        assert!(sol.slice(0.05).unwrap().nu_star.iter().any(|&n| n > 0.0));
        for s in &sol.slices {
            assert_eq!(s.floor_count(), 0, "t = {}", s.t);
        }
    }

    #[test]
    fn hull_leaves_convex_rows_alone_and_fixes_a_dent() {
        let g = grid(10.0, 0.1, 0.01);
        let base = Base::new(UtilitySpec::Power(0.5));
        let convex: Vec<f64> = (0..g.n_z)
            .map(|j| 0.3 + 0.1 * (-g.log_z(j)).exp())
            .collect();
        let mut row = convex.clone();
        convexify_row(&g, &base, &mut row);
        assert_eq!(row, convex);
        let j = g.n_z / 2;
        row[j] += 0.05;
        convexify_row(&g, &base, &mut row);
        assert!(row[j] < convex[j] + 0.05 && row[j] >= convex[j] - 1e-12);
        let slice = make_slice(&g, 0.0, &base, &row, &vec![0.0; g.n_z]);
        assert_eq!(slice.floor_count(), 0);
    }

    #[test]
    fn rejects_off_grid_requests() {
        let m = Model::new(
            UtilitySpec::Log,
            MarketParams::from_lambda(0.3).unwrap(),
            EndowmentSpec::constant(0.0, 1.0).unwrap(),
        );
        let g = grid(10.0, 0.1, 0.01);
        assert!(solve_dual_hjb(&g, &m, &[0.033]).is_err());
        let sol = solve_dual_hjb(&g, &m, &[0.1]).unwrap();
        assert!(sol.value(0.1, 0.0, 1e6).is_err());
        assert!(sol.slice(0.05).is_err());
    }

    #[test]
    fn ladder_starts_at_zero_and_is_symmetric() {
        let l = nu_ladder(100.0);
        assert_eq!(l[0], 0.0);
        assert_eq!(l.len(), 2 * LADDER_RUNGS + 1);
        assert!(l.contains(&100.0) && l.contains(&-100.0));
    }
}
