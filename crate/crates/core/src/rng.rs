use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one logical stream under a run seed.
///
/// Streams keep unrelated consumers (per-class sampling, per-epoch dropout,
/// per-node ego sampling) independent of each other's draw counts.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a domain tag into a stream id so that different call sites never share one.
pub fn tag(domain: u64, index: u64) -> u64 {
    domain.rotate_left(40) ^ index
}

/// A single 64-bit seed drawn from `stream(seed, tag(domain, index))`.
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    stream(seed, tag(domain, index)).next_u64()
}

pub(crate) mod domain {
    pub const CLASS_ORDER: u64 = 1;
    pub const TRAIN_SAMPLE: u64 = 2;
    pub const TEST_SAMPLE: u64 = 3;
    pub const EGO: u64 = 4;
    pub const INIT: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const HEAD_GROWTH: u64 = 7;
    pub const PROTO_SAMPLE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const FD_COORDS: u64 = 10;
    pub const SESSION: u64 = 11;
}
