//! Seed derivation for reproducible sub-streams.
//!
//! Every randomized stage takes one base seed and derives per-item seeds from
//! stable identifiers, so a result never depends on iteration order, thread
//! scheduling, or how a collection happened to be laid out. The derivation is
//! pure integer arithmetic and identical on every platform.

/// FNV-1a over a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer; a cheap bijective mixer.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(base, label, index)`.
///
/// Identical triples always yield identical children; distinct triples
/// collide with negligible probability. `label` is typically a document or
/// story id, `index` a completion or epoch number.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    splitmix(splitmix(base ^ fnv1a(label.as_bytes())).wrapping_add(index))
}
