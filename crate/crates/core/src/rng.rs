//! Keyed random streams.
//!
//! Every random decision in the toolkit is drawn from a ChaCha8 stream whose
//! seed is derived from the run seed plus a stable key (an image id, a resample
//! index, a row index). Work units can then run in any order, on any number of
//! threads, and still produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a key from a seed and an integer index.
pub fn key_index(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Derive a key from a seed and a string (typically an image id).
pub fn key_str(seed: u64, s: &str) -> u64 {
    mix64(mix64(seed) ^ fnv1a(s.as_bytes()))
}

/// A deterministic stream for the given key.
pub fn stream(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Uniform value in [0, 1) derived purely from a key; 53 bits of mantissa.
pub fn unit_from_key(key: u64) -> f64 {
    (mix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
