//! Seed derivation. Every stage gets its own stream derived from one master
//! seed, so a partial rerun draws exactly the numbers a full run would.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a stage label (FNV-1a over the label).
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(master ^ mix64(h))
}

/// Derive a child seed from `master` and an index.
pub fn derive_index(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(mix64(index.wrapping_add(1))))
}
