//! Seeded random streams.
//!
//! One user-facing seed fans out into independent ChaCha streams keyed by an
//! index (replication number, pipeline stage), so results do not depend on
//! the order in which replications are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream `index` of the generator family identified by `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Well-known stream indices used by the experiment pipelines.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const ORDERING: u64 = 2;
    pub const SPLITS: u64 = 3;
    pub const BAND: u64 = 4;
    /// Replication `r` of a Monte-Carlo study uses `REPLICATION_BASE + r`.
    pub const REPLICATION_BASE: u64 = 1 << 20;
}
