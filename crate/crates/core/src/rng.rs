//! Seeded generators. Every consumer gets its own ChaCha stream derived from
//! a 64-bit seed, so adding a consumer never perturbs another one's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids; layer-indexed consumers add their index.
pub mod stream {
    pub const WEIGHTS: u64 = 0x1000;
    pub const SHUFFLE: u64 = 0x2000;
    pub const BLOB_CENTERS: u64 = 0x3000;
    pub const BLOB_SAMPLES: u64 = 0x3001;
    pub const SPLIT: u64 = 0x4000;
    pub const PROBE: u64 = 0x5000;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
