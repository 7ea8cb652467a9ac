//! Seed derivation for reproducible, parallelizable experiments.
//!
//! Every random quantity in this crate is drawn from a stream whose seed is
//! derived from a master seed and an explicit integer path, e.g.
//! `(master, [TAG_TRIAL, trial_index])`. Derivation is a pure function of the
//! path, so adding trials or running units of work in parallel never
//! reshuffles the randomness of earlier units.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of integers.
///
/// `derive(m, &[a, b])` differs from `derive(m, &[b, a])` and from
/// `derive(m, &[a])`; components act like nested counters.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = mix(master.wrapping_add(GOLDEN));
    for &component in path {
        state = mix(state.wrapping_add(GOLDEN).wrapping_add(component));
    }
    state
}

/// A ChaCha stream keyed by a derived seed.
pub fn stream(master: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, path))
}
