//! Counter-based Gaussian streams.
//!
//! Every path owns two ChaCha8 streams (one per Brownian driver) selected by
//! the stream counter `2·path + driver` under a key derived from the base
//! seed, so any path can be regenerated from `(seed, path)` alone. Each
//! driver is drawn terminal-first and then filled in step by step as a
//! Brownian bridge; evaluations that only need terminal values skip the fill.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer.
pub(crate) fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Which Brownian motion a stream drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Drives the traded asset.
    B = 0,
    /// Drives the endowment factor.
    W = 1,
}

#[derive(Debug, Clone)]
pub(crate) struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::from_seed(key_from_seed(seed)),
        }
    }

    pub(crate) fn stream(&self, path: u64, driver: Driver) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(path.wrapping_mul(2).wrapping_add(driver as u64));
        rng.set_word_pos(0);
        rng
    }
}

/// Sequential Brownian-bridge sampler over a uniform grid.
#[derive(Debug, Clone)]
pub struct Bridge {
    rng: ChaCha8Rng,
    dt: f64,
    steps_left: usize,
    gap: f64,
    terminal: f64,
}

impl Bridge {
    pub(crate) fn new(mut rng: ChaCha8Rng, horizon: f64, n_steps: usize) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        let terminal = horizon.sqrt() * z;
        Self {
            rng,
            dt: horizon / n_steps as f64,
            steps_left: n_steps,
            gap: terminal,
            terminal,
        }
    }

    /// Value of the driver at the horizon.
    pub fn terminal(&self) -> f64 {
        self.terminal
    }

    /// Next increment; exactly `n_steps` calls reconstruct the terminal value.
    #[inline]
    pub fn next_increment(&mut self) -> f64 {
        debug_assert!(self.steps_left > 0);
        if self.steps_left == 1 {
            self.steps_left = 0;
            let inc = self.gap;
            self.gap = 0.0;
            return inc;
        }
        let k = self.steps_left as f64;
        // remaining time is k·dt; conditional law of the next increment
        let mean = self.gap / k;
        let sd = (self.dt * (k - 1.0) / k).sqrt();
        let z: f64 = self.rng.sample(StandardNormal);
        let inc = mean + sd * z;
        self.gap -= inc;
        self.steps_left -= 1;
        inc
    }
}
