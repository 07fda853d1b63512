//! Deterministic named RNG streams.
//!
//! All randomness in a run flows from one 64-bit seed. Each component draws
//! from a stream derived from (seed, name), so adding a new consumer never
//! perturbs the draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the stream name, folded with the run seed.
fn stream_id(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// RNG for the named stream of a run.
pub fn stream(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_id(seed, name))
}

/// Substream indexed by an integer, e.g. one per restart or per (d, k) cell.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_id(seed, name) ^ index.wrapping_mul(0xd1342543de82ef95))
}
