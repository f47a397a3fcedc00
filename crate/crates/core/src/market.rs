//! The two-driver market: a Black–Scholes asset driven by `B`, an endowment
//! factor `η_t = η₀ + W_t` driven by an independent `W`, and the exponential
//! density processes `dZ = -Z (λ dB + ν dW)`.
//!
//! The asset price itself is never simulated. Wealth under a constant dollar
//! exposure θ is `x + θ(μt + σB_t)` and every dual object depends only on
//! `(B, W)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlParams;
use crate::error::{invalid, require_finite, require_positive, Result};
use crate::rng::{Bridge, Driver, StreamFactory};
use crate::sim::{self, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    mu: f64,
    sigma: f64,
    lambda: f64,
}

impl MarketParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        require_finite("mu", mu)?;
        require_positive("sigma", sigma)?;
        if mu == 0.0 {
            return Err(invalid("mu", "drift must be nonzero"));
        }
        Ok(Self {
            mu,
            sigma,
            lambda: mu / sigma,
        })
    }

    /// Parameters with a given market price of risk and unit volatility.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, 1.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Market price of risk `μ/σ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Shape of the endowment payoff `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhiKind {
    /// `c0 + c1 / (1 + exp(-(η - m)/s))`.
    Logistic { c0: f64, c1: f64, m: f64, s: f64 },
    /// Piecewise-linear through sorted knots, flat outside.
    Table { knots: Vec<(f64, f64)> },
}

/// Where `inf φ` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InfSet {
    /// `φ` is constant.
    Everywhere,
    /// Not attained; approached as `η → direction·∞`.
    Asymptotic { direction: f64 },
    /// Attained on `[lo, hi]` (possibly a single point, possibly unbounded).
    Attained { lo: f64, hi: f64 },
}

impl InfSet {
    /// True when the infimum is attained on a set of positive length.
    pub fn has_positive_measure(&self) -> bool {
        match *self {
            InfSet::Everywhere => true,
            InfSet::Asymptotic { .. } => false,
            InfSet::Attained { lo, hi } => hi > lo,
        }
    }
}

/// Bounded continuous endowment payoff with the factor start `η₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndowmentSpec {
    eta0: f64,
    kind: PhiKind,
    inf_phi: f64,
    sup_phi: f64,
}

impl EndowmentSpec {
    pub fn logistic(eta0: f64, c0: f64, c1: f64, m: f64, s: f64) -> Result<Self> {
        for (name, v) in [("eta0", eta0), ("c0", c0), ("c1", c1), ("m", m)] {
            require_finite(name, v)?;
        }
        require_positive("s", s)?;
        let (inf_phi, sup_phi) = if c1 >= 0.0 {
            (c0, c0 + c1)
        } else {
            (c0 + c1, c0)
        };
        Ok(Self {
            eta0,
            kind: PhiKind::Logistic { c0, c1, m, s },
            inf_phi,
            sup_phi,
        })
    }

    pub fn table(eta0: f64, knots: Vec<(f64, f64)>) -> Result<Self> {
        require_finite("eta0", eta0)?;
        if knots.is_empty() {
            return Err(invalid("knots", "need at least one knot"));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid("knots", "abscissae must be strictly increasing"));
            }
        }
        for &(x, y) in &knots {
            require_finite("knot", x)?;
            require_finite("knot", y)?;
        }
        let inf_phi = knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
        let sup_phi = knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            eta0,
            kind: PhiKind::Table { knots },
            inf_phi,
            sup_phi,
        })
    }

    pub fn constant(eta0: f64, c: f64) -> Result<Self> {
        Self::table(eta0, vec![(0.0, c)])
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn inf_phi(&self) -> f64 {
        self.inf_phi
    }

    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }

    /// `φ(η₀)`.
    pub fn phi0(&self) -> f64 {
        self.phi(self.eta0)
    }

    pub fn is_constant(&self) -> bool {
        self.inf_phi == self.sup_phi
    }

    #[inline]
    pub fn phi(&self, eta: f64) -> f64 {
        match &self.kind {
            PhiKind::Logistic { c0, c1, m, s } => c0 + c1 / (1.0 + (-(eta - m) / s).exp()),
            PhiKind::Table { knots } => table_eval(knots, eta),
        }
    }

    pub fn inf_set(&self) -> InfSet {
        if self.is_constant() {
            return InfSet::Everywhere;
        }
        match &self.kind {
            PhiKind::Logistic { c1, .. } => InfSet::Asymptotic {
                direction: if *c1 > 0.0 { -1.0 } else { 1.0 },
            },
            PhiKind::Table { knots } => {
                let first = knots.iter().position(|k| k.1 == self.inf_phi).unwrap();
                let last = knots.iter().rposition(|k| k.1 == self.inf_phi).unwrap();
                let lo = if first == 0 {
                    f64::NEG_INFINITY
                } else {
                    knots[first].0
                };
                let hi = if last == knots.len() - 1 {
                    f64::INFINITY
                } else {
                    knots[last].0
                };
                InfSet::Attained { lo, hi }
            }
        }
    }

    /// Isolated points where a piecewise-linear `φ` touches its infimum.
    pub(crate) fn table_minimizers(&self) -> Vec<f64> {
        match &self.kind {
            PhiKind::Table { knots } => knots
                .iter()
                .filter(|k| k.1 == self.inf_phi)
                .map(|k| k.0)
                .collect(),
            PhiKind::Logistic { .. } => Vec::new(),
        }
    }
}

fn table_eval(knots: &[(f64, f64)], eta: f64) -> f64 {
    let n = knots.len();
    if eta <= knots[0].0 {
        return knots[0].1;
    }
    if eta >= knots[n - 1].0 {
        return knots[n - 1].1;
    }
    let idx = knots.partition_point(|k| k.0 <= eta);
    let (x0, y0) = knots[idx - 1];
    let (x1, y1) = knots[idx];
    y0 + (y1 - y0) * (eta - x0) / (x1 - x0)
}

/// Lazily generated Brownian paths on a uniform grid.
///
/// Nothing is stored per path: path `i` is regenerated from `(seed, i)` on
/// demand, so the bundle is cheap to clone and share across threads.
#[derive(Debug, Clone)]
pub struct PathBundle {
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    streams: StreamFactory,
}

impl PathBundle {
    pub fn new(horizon: f64, n_steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        require_positive("horizon", horizon)?;
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be at least 1"));
        }
        if n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        Ok(Self {
            horizon,
            n_steps,
            n_paths,
            seed,
            streams: StreamFactory::new(seed),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Bridge sampler for one driver of one path.
    pub fn driver(&self, path: usize, driver: Driver) -> Bridge {
        Bridge::new(
            self.streams.stream(path as u64, driver),
            self.horizon,
            self.n_steps,
        )
    }

    /// Materialized `(ΔB, ΔW)` increments of path `i`.
    pub fn increments(&self, path: usize) -> (Vec<f64>, Vec<f64>) {
        let mut b = self.driver(path, Driver::B);
        let mut w = self.driver(path, Driver::W);
        let db = (0..self.n_steps).map(|_| b.next_increment()).collect();
        let dw = (0..self.n_steps).map(|_| w.next_increment()).collect();
        (db, dw)
    }

    /// Grid index of time `t`, if `t` lies on the grid within rounding.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt()).round();
        if k >= 1.0 && k <= self.n_steps as f64 && (k * self.dt() - t).abs() <= 1e-9 * t.max(1.0) {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// `simulate_paths` entry point with argument validation.
pub fn simulate_paths(
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    PathBundle::new(horizon, n_steps, n_paths, seed)
}

/// Per-path `(Z_T, η_T)` under the reference measure.
///
/// `log Z` advances by `-λΔB - νΔW - ½(λ² + ν²)Δt` with `ν` frozen on each
/// step, so `Z_T > 0` on every path. Mixture controls return the mixed
/// density.
pub fn density_terminal(
    params: &MarketParams,
    control: &ControlParams,
    bundle: &PathBundle,
    endow: &EndowmentSpec,
) -> Result<Vec<(f64, f64)>> {
    control.validate()?;
    if control.needs_multiplier() {
        return Err(invalid(
            "control",
            "capped controls are defined only for a dual multiplier",
        ));
    }
    let (weights, feedbacks) = control.components(endow.eta0());
    let rows: Vec<(f64, f64)> = (0..bundle.n_paths())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let t = sim::simulate(
                bundle,
                i,
                params.lambda(),
                endow.eta0(),
                &feedbacks,
                Sampling::Reference,
                bundle.n_steps(),
            );
            let z = weights
                .iter()
                .zip(&t.log_z)
                .map(|(w, lz)| w * lz.exp())
                .sum::<f64>();
            (z, t.eta)
        })
        .collect();
    Ok(rows)
}

/// Constant dollar exposure, optionally stopped once wealth reaches a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub theta: f64,
    pub floor: Option<f64>,
}

impl Exposure {
    pub fn constant(theta: f64) -> Self {
        Self { theta, floor: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthPaths {
    pub terminal: Vec<f64>,
    /// Minimum of `X_t` over the grid, per path.
    pub min_wealth: Vec<f64>,
    /// Paths on which the floor was reached.
    pub floor_breaches: usize,
}

/// `X_T = x + θ(μT + σB_T)` per path, with the running minimum monitored on
/// the grid.
pub fn wealth_terminal(
    params: &MarketParams,
    exposure: Exposure,
    bundle: &PathBundle,
    x: f64,
) -> WealthPaths {
    let dt = bundle.dt();
    let rows: Vec<(f64, f64, bool)> = (0..bundle.n_paths())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let mut b = bundle.driver(i, Driver::B);
            let mut wealth = x;
            let mut lowest = x;
            let mut stopped = exposure.floor.is_some_and(|f| x <= f);
            for _ in 0..bundle.n_steps() {
                let db = b.next_increment();
                if !stopped {
                    wealth += exposure.theta * (params.mu() * dt + params.sigma() * db);
                    lowest = lowest.min(wealth);
                    if exposure.floor.is_some_and(|f| wealth <= f) {
                        stopped = true;
                    }
                }
            }
            (wealth, lowest, stopped)
        })
        .collect();
    WealthPaths {
        floor_breaches: rows.iter().filter(|r| r.2).count(),
        terminal: rows.iter().map(|r| r.0).collect(),
        min_wealth: rows.iter().map(|r| r.1).collect(),
    }
}
