//! Seeded RNG plumbing. Every stochastic component takes an explicit RNG so
//! runs are reproducible end to end.

use rand::SeedableRng;

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives a stable sub-seed from a master seed and a purpose tag, so
/// independent components (env, planner, mechanism, ...) draw from
/// decoupled streams.
pub fn sub_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
