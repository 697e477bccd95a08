//! Stable seed derivation. Every random stream in the pipeline is
//! `derive_seed(global_seed, tag)` for a descriptive tag, so adding or
//! reordering jobs never shifts another job's stream.

/// FNV-1a over `tag`, mixed with `global` through a splitmix64 finalizer.
pub fn derive_seed(global: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(global.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
