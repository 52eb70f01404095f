//! Deterministic seed derivation.
//!
//! Every source of randomness in a run is keyed from one root seed plus the
//! coordinates of where the randomness is consumed (site, round, epoch, ...),
//! so concurrent execution and code reordering can never change results.

/// SplitMix64 finalizer; good avalanche, stable across platforms.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of coordinates.
#[must_use]
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for (i, &p) in parts.iter().enumerate() {
        acc = splitmix64(acc ^ splitmix64(p.wrapping_add(i as u64 + 1)));
    }
    acc
}
