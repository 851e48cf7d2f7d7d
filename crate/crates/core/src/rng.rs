//! Deterministic random-number plumbing.
//!
//! Every stochastic operation takes an explicit integer seed, and ensembles
//! derive one independent stream per trajectory index from the master seed.
//! Results are therefore identical for any thread count and any sample order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; bijective 64-bit mix.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for trajectory `index` of the ensemble with the given master seed.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let mut s = mix(master_seed ^ 0x71c9_e1b0_6a48_0fd3);
    for (k, chunk) in seed.chunks_exact_mut(8).enumerate() {
        s = mix(s ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64 + 1));
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// RNG for a single seeded run (trajectory index 0).
pub fn run_rng(seed: u64) -> ChaCha8Rng {
    trajectory_rng(seed, 0)
}

/// Sub-seed for trajectory `index` of an ensemble, for operations that take
/// a plain integer seed. Stable, so parallel scheduling cannot change any
/// stream.
pub fn derive_stream(master_seed: u64, index: u64) -> u64 {
    mix(master_seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
