//! Deterministic seed-streams.
//!
//! Every source of randomness in the crate is a [`SeedStream`]: a ChaCha8
//! generator keyed by a master seed plus a path of integer tags. Streams
//! derived from the same (seed, path) are bit-identical across runs and
//! platforms, which is what the end-to-end determinism contract rests on.
//! The harness derives fresh streams per (purpose, epoch, cycle, ...), so
//! resuming from a checkpoint at epoch `k` regenerates exactly the streams
//! an uninterrupted run would have used from epoch `k` on.

use rand::distributions::uniform::SampleUniform;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::num::Scalar;

/// Stream purposes used by the harness; kept here so derivations are
/// collision-free by construction.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const METRIC_PAIRS: u64 = 5;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(z: u64) -> u64 {
    let mut s = z;
    splitmix64(&mut s)
}

/// A deterministic random stream addressed by (seed, path).
#[derive(Debug, Clone)]
pub struct SeedStream {
    rng: ChaCha8Rng,
}

impl SeedStream {
    /// Derive the stream for `seed` at the given tag path.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut state = mix(seed ^ 0x51ed_2701_93af_c2e4);
        for &t in path {
            state = mix(state ^ mix(t ^ 0xa076_1d64_78bd_642f));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        SeedStream {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive a child stream without consuming randomness from `self`.
    pub fn child(seed: u64, path: &[u64], index: u64) -> Self {
        let mut full = path.to_vec();
        full.push(index);
        Self::derive(seed, &full)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() over empty range");
        self.rng.gen_range(0..n)
    }

    /// Uniform scalar in `[lo, hi)`.
    pub fn uniform<F: Scalar + SampleUniform>(&mut self, lo: F, hi: F) -> F {
        self.rng.gen_range(lo..hi)
    }

    /// Bernoulli draw with success probability `p` (in f64 for exactness
    /// across scalar instantiations).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.gen_range(0.0f64..1.0) < p
    }

    /// Standard normal sample, drawn in f64 and converted.
    pub fn standard_normal<F: Scalar>(&mut self) -> F {
        let z: f64 = self.rng.sample(rand_distr::StandardNormal);
        F::from_f64(z)
    }

    /// A uniform random bit as 0.0/1.0.
    pub fn bit<F: Scalar>(&mut self) -> F {
        if self.rng.gen_range(0..2u32) == 0 {
            F::zero()
        } else {
            F::one()
        }
    }
}
