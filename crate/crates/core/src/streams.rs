//! Deterministic random-number streams.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is
//! derived from a master seed and a tag path (replicate index, stratum id,
//! covariate index, ...). Derivation uses the SplitMix64 finalizer, so
//! streams are independent of scheduling and of each other: adding a
//! consumer of one tag path never perturbs the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(master);
    for &tag in tags {
        acc = mix(acc ^ mix(tag));
    }
    acc
}

/// A seeded generator for the given tag path.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Tag namespaces so different subsystems never share a stream.
pub mod tags {
    /// Pseudo-population synthesis draws.
    pub const SYNTHESIS: u64 = 1;
    /// Per-replicate sampling inside the simulation harness.
    pub const REPLICATE: u64 = 2;
}
