//! Path kernel shared by the Monte Carlo estimators.
//!
//! Paths can be generated under the reference measure or under the measure
//! of one mixture component. Under component `k` the drivers acquire the
//! Girsanov drifts `dB = dB̃ - λdt`, `dW = dW̃ - ν_k dt`; the densities of all
//! components are tracked along the same path. Expectations then follow from
//!
//! ```text
//! E[F(Z_T, η_T)] = Σ_k w_k E^{Q_k}[F(Z_T, η_T) / Z_T],   Z = Σ_j w_j Z^j,
//! ```
//!
//! which keeps estimators of `E[Z_T φ(η_T)]` well conditioned for strong
//! controls, where reference-measure weights degenerate.

use rayon::prelude::*;

use crate::control::Feedback;
use crate::market::PathBundle;
use crate::rng::Driver;
use crate::stats::{par_moments, Welford};

/// Most mixture components a control may have.
pub(crate) const MAX_COMPONENTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sampling {
    Reference,
    Component(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Terminal {
    pub log_z: [f64; MAX_COMPONENTS],
    pub eta: f64,
}

/// Simulates `steps` grid steps of path `path`.
pub(crate) fn simulate(
    bundle: &PathBundle,
    path: usize,
    lambda: f64,
    eta0: f64,
    feedbacks: &[Feedback],
    sampling: Sampling,
    steps: usize,
) -> Terminal {
    debug_assert!(!feedbacks.is_empty() && feedbacks.len() <= MAX_COMPONENTS);
    debug_assert!(steps >= 1 && steps <= bundle.n_steps());
    let dt = bundle.dt();
    let full = steps == bundle.n_steps();
    let t_end = if full {
        bundle.horizon()
    } else {
        steps as f64 * dt
    };

    let mut b = bundle.driver(path, Driver::B);
    let b_tilde = if full {
        b.terminal()
    } else {
        (0..steps).map(|_| b.next_increment()).sum()
    };
    let b_ref = match sampling {
        Sampling::Reference => b_tilde,
        Sampling::Component(_) => b_tilde - lambda * t_end,
    };

    let mut w = bundle.driver(path, Driver::W);
    let mut w_part = [0.0; MAX_COMPONENTS];
    let mut eta = eta0;
    if feedbacks.iter().all(Feedback::is_static) {
        let w_tilde = if full {
            w.terminal()
        } else {
            (0..steps).map(|_| w.next_increment()).sum()
        };
        let drift = match sampling {
            Sampling::Reference => 0.0,
            Sampling::Component(k) => feedbacks[k].nu(0.0, eta0),
        };
        let w_ref = w_tilde - drift * t_end;
        for (part, fb) in w_part.iter_mut().zip(feedbacks) {
            let nu = fb.nu(0.0, eta0);
            *part = -nu * w_ref - 0.5 * nu * nu * t_end;
        }
        eta += w_ref;
    } else {
        let mut nus = [0.0; MAX_COMPONENTS];
        for k in 0..steps {
            let t = k as f64 * dt;
            for (nu, fb) in nus.iter_mut().zip(feedbacks) {
                *nu = fb.nu(t, eta);
            }
            let drift = match sampling {
                Sampling::Reference => 0.0,
                Sampling::Component(s) => nus[s],
            };
            let dw = w.next_increment() - drift * dt;
            for (part, &nu) in w_part.iter_mut().zip(&nus).take(feedbacks.len()) {
                *part -= nu * dw + 0.5 * nu * nu * dt;
            }
            eta += dw;
        }
    }

    let common = -lambda * b_ref - 0.5 * lambda * lambda * t_end;
    let mut log_z = [0.0; MAX_COMPONENTS];
    for (lz, part) in log_z.iter_mut().zip(w_part).take(feedbacks.len()) {
        *lz = common + part;
    }
    Terminal { log_z, eta }
}

/// Terminal states of every path under every component measure, cached so
/// that mixture weights can be re-optimized without resimulating.
#[derive(Debug, Clone)]
pub struct ControlSamples {
    components: usize,
    /// Per path and sampling component `k`: `[log Z^0, log Z^1, η]`.
    rows: Vec<[[f64; 3]; MAX_COMPONENTS]>,
}

impl ControlSamples {
    pub(crate) fn generate(
        bundle: &PathBundle,
        lambda: f64,
        eta0: f64,
        feedbacks: &[Feedback],
        sampling: &[f64],
        steps: usize,
    ) -> Self {
        let components = feedbacks.len();
        let rows = (0..bundle.n_paths())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let mut row = [[0.0; 3]; MAX_COMPONENTS];
                for k in 0..components {
                    if sampling[k] == 0.0 {
                        continue;
                    }
                    let t = simulate(
                        bundle,
                        i,
                        lambda,
                        eta0,
                        feedbacks,
                        Sampling::Component(k),
                        steps,
                    );
                    row[k] = [t.log_z[0], t.log_z[1], t.eta];
                }
                row
            })
            .collect();
        Self { components, rows }
    }

    pub fn n_paths(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn components(&self) -> usize {
        self.components
    }

    /// Moments of `Σ_k s_k f(log Z, log Z_s, η)` over paths, where `s` are
    /// the sampling weights passed to [`ControlSamples::generate`],
    /// `log Z` holds the component log-densities and `Z_s = Σ_k s_k Z^k`.
    /// `f` must return the integrand divided by `Z_s`.
    pub(crate) fn moments<const K: usize, F>(&self, sampling: &[f64], f: F) -> [Welford; K]
    where
        F: Fn([f64; MAX_COMPONENTS], f64, f64) -> [f64; K] + Sync,
    {
        let n = self.components;
        par_moments(self.rows.len(), |i| {
            let row = &self.rows[i];
            let mut acc = [0.0; K];
            for k in 0..n {
                if sampling[k] == 0.0 {
                    continue;
                }
                let [l0, l1, eta] = row[k];
                let log_s = mix_log_density(sampling, [l0, l1], n);
                let vals = f([l0, l1], log_s, eta);
                for (a, v) in acc.iter_mut().zip(vals) {
                    *a += sampling[k] * v;
                }
            }
            acc
        })
    }
}

/// `log Σ_k w_k Z^k` over the first `n` components.
#[inline]
pub(crate) fn mix_log_density(weights: &[f64], log_z: [f64; MAX_COMPONENTS], n: usize) -> f64 {
    if n == 1 {
        return log_z[0];
    }
    log_sum_exp(weights[0].ln() + log_z[0], weights[1].ln() + log_z[1])
}

#[inline]
pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlParams;
    use crate::market::simulate_paths;

    #[test]
    fn zero_lambda_zero_control_is_identity_density() {
        let bundle = simulate_paths(1.0, 4, 200, 1).unwrap();
        let (_, fb) = ControlParams::zero().components(0.0);
        for i in 0..bundle.n_paths() {
            let t = simulate(&bundle, i, 0.0, 0.0, &fb, Sampling::Reference, 4);
            assert_eq!(t.log_z[0], 0.0);
        }
    }

    #[test]
    fn static_fast_path_matches_stepping() {
        // a constant control run through both code paths
        let bundle = simulate_paths(0.5, 16, 50, 11).unwrap();
        let fast = [Feedback::Constant(0.7)];
        let slow = [Feedback::Bang {
            level: 0.7,
            until: 10.0,
        }];
        for i in 0..bundle.n_paths() {
            for s in [Sampling::Reference, Sampling::Component(0)] {
                let a = simulate(&bundle, i, 0.3, 0.2, &fast, s, 16);
                let b = simulate(&bundle, i, 0.3, 0.2, &slow, s, 16);
                assert!((a.log_z[0] - b.log_z[0]).abs() < 1e-12);
                assert!((a.eta - b.eta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, 2.0), 2.0);
        assert!((log_sum_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(0.0, -800.0)).abs() < 1e-300);
    }
}
