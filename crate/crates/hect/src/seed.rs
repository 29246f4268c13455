//! Seeded random streams.
//!
//! Every stochastic site draws from its own ChaCha stream addressed by
//! `(master seed, domain tag, index)`. Streams never share state, so
//! replicates and trials can run on any number of workers in any order and
//! still reproduce bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated stream families apart.
pub mod tag {
    /// Cross-fit fold keys.
    pub const FOLDS: u64 = 1;
    /// Label permutations of the two-sample test.
    pub const PERMUTE: u64 = 2;
    /// Trusted-subset draws of the goodness-of-fit test.
    pub const GOF: u64 = 3;
    /// Synthetic trusted-ensemble draws.
    pub const SYNTH_TRUSTED: u64 = 4;
    /// Synthetic test-ensemble draws.
    pub const SYNTH_TEST: u64 = 5;
    /// Predict-time column shuffles for feature importance.
    pub const SHUFFLE: u64 = 6;
    /// Per-trial master seeds inside a study.
    pub const STUDY: u64 = 7;
}

/// RNG for stream `index` of the family `tag` under `seed`.
///
/// The key is derived from the master seed alone; `(tag, index)` selects the
/// ChaCha stream, so families and indices never overlap. `index` must be
/// below 2^48.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48, "stream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | index);
    rng
}

/// Stable 64-bit key for a sample id under a fold seed.
///
/// FNV-1a over the seed bytes followed by the id bytes. Keys travel with the
/// sample, not its row position, so fold assignment survives row permutation.
pub fn fold_key(seed: u64, id: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}
