//! Deterministic derivation of independent random streams.
//!
//! Every source of randomness in the crate is a ChaCha12 stream keyed by the
//! run seed plus a few context words (epoch, example index, trial index, task
//! id hash, ...). Identical keys give identical streams on every platform and
//! at every worker count, which is what makes training and evaluation
//! bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 step: a well-mixed 64-bit permutation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the seed and context words into one well-mixed 64-bit key. The fold
/// is order-sensitive, so (epoch, trial) and (trial, epoch) name different
/// streams.
pub fn derive_key(seed: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

/// A fresh ChaCha12 stream for the given context.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_key(seed, parts))
}

/// FNV-1a hash of a string, used to key per-task streams by task id.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
