//! Streaming moments and deterministic parallel reductions.

use rayon::prelude::*;
use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Paths per reduction chunk. Fixed so that results do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 1024;

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            std_err: (var / self.n.max(1) as f64).sqrt(),
            n: self.n,
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_err: 0.0,
            n: 0,
        }
    }

    /// Half-width of the 95% confidence interval.
    pub fn half_width(&self) -> f64 {
        Z95 * self.std_err
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - self.half_width(), self.mean + self.half_width())
    }

    /// Full width of the 95% interval.
    pub fn ci_width(&self) -> f64 {
        2.0 * self.half_width()
    }
}

/// `sqrt(se_a² + se_b²)`.
pub fn pooled_se(a: &Estimate, b: &Estimate) -> f64 {
    a.std_err.hypot(b.std_err)
}

/// Reduces `K` per-path statistics over `n` paths. Chunks are processed in
/// parallel and merged in chunk order, so the result is bit-identical for any
/// thread count.
pub fn par_moments<const K: usize, F>(n: usize, f: F) -> [Welford; K]
where
    F: Fn(usize) -> [f64; K] + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<[Welford; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = [Welford::default(); K];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let row = f(i);
                for (a, x) in acc.iter_mut().zip(row) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = [Welford::default(); K];
    for part in &partial {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total
}

/// Mean of a per-path statistic that may be `-∞`. Infinite values poison the
/// estimate; their count is returned alongside.
pub fn par_mean_extended<F>(n: usize, f: F) -> (Estimate, u64)
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<(Welford, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Welford::default();
            let mut bad = 0u64;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = f(i);
                if x.is_finite() {
                    acc.push(x);
                } else {
                    bad += 1;
                }
            }
            (acc, bad)
        })
        .collect();
    let mut total = Welford::default();
    let mut bad = 0;
    for (w, b) in &partial {
        total.merge(w);
        bad += b;
    }
    let mut est = total.estimate();
    if bad > 0 {
        est.mean = f64::NEG_INFINITY;
        est.std_err = 0.0;
        est.n += bad;
    }
    (est, bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..5000)
            .map(|i| ((i * 7919) % 1000) as f64 * 0.37 - 40.0)
            .collect();
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let est = w.estimate();
        assert!((est.mean - mean).abs() < 1e-12);
        assert!((est.std_err - (var / xs.len() as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn infinite_values_poison_mean() {
        let (est, bad) =
            par_mean_extended(3000, |i| if i == 1234 { f64::NEG_INFINITY } else { 1.0 });
        assert_eq!(bad, 1);
        assert_eq!(est.mean, f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn merge_is_split_invariant(xs in proptest::collection::vec(-1e3f64..1e3, 2..400), cut in 0usize..400) {
            let cut = cut.min(xs.len());
            let mut whole = Welford::default();
            xs.iter().for_each(|&x| whole.push(x));
            let (mut a, mut b) = (Welford::default(), Welford::default());
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            let (e1, e2) = (whole.estimate(), a.estimate());
            prop_assert!((e1.mean - e2.mean).abs() <= 1e-12 * e1.mean.abs().max(1.0));
            prop_assert!((e1.std_err - e2.std_err).abs() <= 1e-9 * e1.std_err.max(1.0));
        }
    }
}
