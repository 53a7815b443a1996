//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`stream`], which returns a
//! ChaCha8 generator keyed by a 64-bit seed and positioned on an independent
//! 64-bit stream. ChaCha is counter based, so `(seed, stream)` pairs never
//! overlap and parallel workers can each own a stream without coordination.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Generator for `seed` on stream `id`.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes two words into a new seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
