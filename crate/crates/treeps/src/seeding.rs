//! Deterministic seed derivation.
//!
//! Every random decision in the workspace draws from a ChaCha stream whose
//! seed is derived here. Sub-streams are keyed by small integer paths (for
//! example `(depth, parent id, sample index)`), so concurrent generation can
//! give each task its own stream and still produce results that are
//! independent of scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; stable across platforms and releases, unlike the
/// std hasher, so derived seeds can be relied on in frozen test expectations.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and an integer key path.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = mix(base ^ 0x6a09_e667_f3bc_c909);
    for part in path {
        state = mix(state ^ mix(*part));
    }
    state
}

/// ChaCha stream for a derived seed.
pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// 64-bit content fingerprint used for config and parameter digests.
/// Not cryptographic; it only has to make accidental mismatches loud.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut state = mix(0x51_7c_c1_b7_27_22_0a_95);
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state = mix(state ^ u64::from_le_bytes(word));
    }
    mix(state ^ bytes.len() as u64)
}

/// Hex rendering of [`fingerprint`], the form stored in artifacts.
pub fn fingerprint_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fingerprint(bytes))
}
