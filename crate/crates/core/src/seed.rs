//! Deterministic seed derivation for independent streams.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a base seed together with a sequence of stream keys.
///
/// Stable across platforms and compiler versions, unlike `std`'s hasher.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(base.wrapping_add(GOLDEN)), |acc, &k| {
            mix64(acc ^ mix64(k.wrapping_add(GOLDEN)))
        })
}
