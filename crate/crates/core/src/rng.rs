//! Deterministic random streams.
//!
//! All randomness derives from one 64-bit seed. Named substreams are ChaCha
//! streams keyed by that seed and indexed by a hash of `(name, index)`, so a
//! parallel loop can hand sample `i` its own generator and still produce the
//! same table regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// FNV-1a over the name bytes, mixed with the index.
fn stream_id(name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix finalizer so adjacent indices land far apart
    let mut z = h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for substream `(name, index)` of `seed`.
pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name, index));
    rng
}

/// Derive a child seed, for handing a whole experiment cell its own seed.
pub fn child_seed(seed: u64, name: &str, index: u64) -> u64 {
    seed ^ stream_id(name, index).rotate_left(17)
}
