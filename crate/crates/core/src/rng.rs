//! Hierarchically keyed random streams.
//!
//! Every random draw in a run comes from a stream identified by the master
//! seed plus a path of integer labels (stage, particle, step, ...). Streams
//! never depend on scheduling, so results are independent of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Domain labels that separate unrelated consumers of the same seed.
pub mod tag {
    pub const TRUTH: u64 = 0x7472_7574;
    pub const PRIOR: u64 = 0x7072_696f;
    pub const RESAMPLE: u64 = 0x7265_7361;
    pub const MUTATE: u64 = 0x6d75_7461;
    pub const KALMAN: u64 = 0x6b61_6c6d;
    pub const NOISE_FRONT: u64 = 0x6e66_726f;
    pub const NOISE_PRESSURE: u64 = 0x6e70_7265;
    pub const REPEAT: u64 = 0x7265_7065;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed and a label path into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for (depth, &label) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(label.wrapping_add((depth as u64 + 1) << 56)));
    }
    h
}

/// Opens the stream addressed by `seed` and `path`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_key(seed, path))
}
