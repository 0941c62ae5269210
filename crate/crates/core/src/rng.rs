//! Seeded, platform-independent randomness.
//!
//! All simulation randomness comes from ChaCha8 streams. A scenario seed is
//! split into independent streams (network, one per node boot, fault
//! generation) so that adding a draw in one component never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const NETWORK_STREAM: u64 = 1;
const NODE_STREAM_BASE: u64 = 1 << 32;

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for node `index` after `boot` restarts.
pub fn node_stream(seed: u64, index: usize, boot: u32) -> SimRng {
    stream(seed, NODE_STREAM_BASE + ((index as u64) << 16) + boot as u64)
}

/// SplitMix64 finalizer; used to derive stable per-item decisions.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over bytes; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Deterministic uniform draw in `[0, 1)` for `key` under `seed`.
pub fn unit_hash(seed: u64, key: &str) -> f64 {
    (mix64(seed ^ fnv1a(key.as_bytes())) >> 11) as f64 / (1u64 << 53) as f64
}
