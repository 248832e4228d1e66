//! Named random sub-streams derived from one user seed.

#[inline]
pub(crate) fn splitmix(mut h: u64) -> u64 {
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Seed for item `index` of the sub-stream `stream` under `seed`.
pub fn stream_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream name keeps streams with different names apart.
    let mut name = 0xcbf2_9ce4_8422_2325u64;
    for b in stream.bytes() {
        name = (name ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(seed ^ name) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        assert_eq!(stream_seed(1, "sampling", 5), stream_seed(1, "sampling", 5));
        assert_ne!(stream_seed(1, "sampling", 5), stream_seed(1, "sampling", 6));
        assert_ne!(stream_seed(1, "sampling", 5), stream_seed(1, "init", 5));
        assert_ne!(stream_seed(1, "sampling", 5), stream_seed(2, "sampling", 5));
    }
}
