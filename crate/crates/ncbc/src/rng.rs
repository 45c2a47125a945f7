//! Counter-based deterministic random streams.
//!
//! Instead of a sequential generator, every random quantity is a pure hash
//! of `(seed, entity identifiers)`. The draw for pixel 593 or edge (12, 40)
//! does not depend on how many draws happened before it, so results are
//! independent of evaluation order, chunking, and worker count — the
//! property the reproducibility guarantees of this crate rest on.

/// Domain tag for per-pixel noise streams.
pub const NOISE_TAG: u64 = 0x4e43_4243_6e6f_6973; // "NCBCnois"
/// Domain tag for edge-sampling streams.
pub const EDGE_TAG: u64 = 0x4e43_4243_6564_6765; // "NCBCedge"

/// SplitMix64 finalizer: a well-mixed 64-bit permutation.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and two counters into one well-mixed word.
#[inline]
pub fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b)
}

/// Map a hash to a uniform double in [2⁻⁵³, 1].
///
/// The lower bound is deliberately nonzero: `ln(u)` stays finite for
/// Box–Muller, and an event with probability ≤ 2⁻⁵³ can never fire, which
/// the graph builder exploits as an exact scan cutoff.
#[inline]
pub fn unit_uniform(h: u64) -> f64 {
    const SCALE: f64 = 1.0 / 9007199254740992.0; // 2^-53
    ((h >> 11) as f64 + 1.0) * SCALE
}

/// Two independent standard normal draws from two uniforms (Box–Muller).
#[inline]
pub fn gaussian_pair(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}
