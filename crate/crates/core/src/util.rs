//! Small shared helpers: fingerprints, deterministic seed derivation, float
//! formatting for reproducible text artifacts.

/// FNV-1a 64-bit hash. Used for content fingerprints of design spaces,
/// dictionaries, and dataset files so downstream artifacts can refuse
/// mismatched inputs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 step; mixes a seed into a well-distributed 64-bit value.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a (base, a, b) triple. Used to give every
/// (chunk, configuration) pair its own simulator seed independent of
/// evaluation order.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(base ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ b)
}

/// Shortest round-trip formatting for f64 (Rust's `{}` is shortest-exact).
/// Centralized so every text artifact serializes floats identically.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
