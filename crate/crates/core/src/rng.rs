use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a named substream from the root seed so each component
/// (vocab shuffle, init, negative sampler, ...) is independently
/// reproducible.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the stream name, mixed into the seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}
