//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose seed is
//! `derive_seed(scenario_seed, stream_tag)`. Stream tags are fixed per
//! consumer, so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `mix(base, index) = splitmix64(base ^ splitmix64(index))`.
///
/// Used both for named sub-streams and for per-value sweep seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// Named random sub-streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Channel generator of user slot `n`.
    Channel(u32),
    /// Encoder noise of flow `n`.
    Encoder(u32),
    /// Cross-traffic generator `n`.
    CrossTraffic(u32),
    /// Frame phase offsets.
    Phase,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel(n) => 0x1_0000_0000 | n as u64,
            Stream::Encoder(n) => 0x2_0000_0000 | n as u64,
            Stream::CrossTraffic(n) => 0x3_0000_0000 | n as u64,
            Stream::Phase => 0x4_0000_0000,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream.tag()))
}
