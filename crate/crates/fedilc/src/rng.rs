//! Deterministic seed derivation and sampling helpers.
//!
//! All randomness in the crate flows through ChaCha8 streams keyed by
//! seeds derived here, so every run is reproducible bit-for-bit from a
//! single root seed regardless of platform or thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers of the same root seed from
/// colliding (dataset generation vs. parameter init vs. batch draws).
pub const TAG_INIT: u64 = 0x01;
pub const TAG_CLIENT_BATCH: u64 = 0x02;
pub const TAG_DATASET: u64 = 0x03;
pub const TAG_EVAL_CAP: u64 = 0x04;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and up to three stream indices.
pub fn derive_seed(root: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(root ^ splitmix64(tag));
    h = splitmix64(h ^ splitmix64(a));
    splitmix64(h ^ splitmix64(b))
}

/// ChaCha8 stream for a derived seed.
pub fn stream(root: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, a, b))
}

/// Per-client per-round stream used for mini-batch draws.
pub fn client_round_stream(root: u64, client_id: usize, round: usize) -> ChaCha8Rng {
    stream(root, TAG_CLIENT_BATCH, client_id as u64, round as u64)
}

/// Standard normal via Box-Muller; two uniform draws per sample.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    // gen::<f64>() is in [0, 1); shift to (0, 1] so ln() stays finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Bernoulli draw with probability `p`.
pub fn sample_bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// First `k` entries of a seeded Fisher-Yates shuffle of `0..n`.
///
/// Equivalent to sampling `k` distinct indices without replacement; the
/// draw order is part of the deterministic contract.
pub fn sample_indices<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Full seeded permutation of `0..n`.
pub fn shuffled_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    sample_indices(rng, n, n)
}
