//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Per-node streams add the node index.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SIGNER: u64 = 4;
    pub const TRAIN_BASE: u64 = 1 << 16;
    pub const ATTACK_BASE: u64 = 2 << 16;
    pub const SPEED_BASE: u64 = 3 << 16;
    pub const LINK_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
