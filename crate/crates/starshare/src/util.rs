//! Crate-internal randomness helpers: one ChaCha stream per (seed, index)
//! pair, and uniform doubles built from the high 53 bits.

use rand_chacha::rand_core::RngCore;

/// Derives a 32-byte ChaCha seed from a user seed and a stream index, so
/// replications and multistarts get independent, reproducible streams.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> [u8; 32] {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&stream.to_le_bytes());
    bytes
}

/// Uniform on [0, 1).
pub(crate) fn u01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on (0, 1]: never zero, so `-ln` of it is always finite.
pub(crate) fn u01_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
