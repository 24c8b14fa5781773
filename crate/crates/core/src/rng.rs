//! Keyed random streams.
//!
//! Every stochastic work item (a particle, a candidate pair, a rollout) draws
//! from its own stream derived from the run seed and a small key tuple, so the
//! values it sees do not depend on which worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains; keep distinct so unrelated draws never share a stream.
pub mod domain {
    pub const CONTEXT: u64 = 0x01;
    pub const MEDIATOR: u64 = 0x02;
    pub const ROLLOUT: u64 = 0x03;
    pub const SCM_WEIGHTS: u64 = 0x04;
    pub const SCM_SAMPLE: u64 = 0x05;
    pub const GROUND_TRUTH: u64 = 0x06;
    pub const CALIBRATION: u64 = 0x07;
    pub const TRAINING: u64 = 0x08;
    pub const BASELINE: u64 = 0x09;
    pub const LABEL_PLAN: u64 = 0x0a;
    pub const SIMULATION: u64 = 0x0b;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed and key tuple.
#[inline]
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x3C6E_F372_FE94_F82B)));
    }
    h
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}

/// Counter-based uniform in `[0, 1)`; a pure function of its arguments.
#[inline]
pub fn uniform(seed: u64, keys: &[u64]) -> f64 {
    (mix(seed, keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
