//! Seed derivation. Every stochastic routine takes a base seed and derives
//! independent streams from it with integer labels, so results do not depend
//! on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 chain over `labels`, starting from `seed`.
pub(crate) fn mix_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut z = seed;
    for &l in labels {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(l);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Generator for stream `stream` of `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
