//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream names used across the crate.
pub mod streams {
    pub const LANDSCAPE: &str = "landscape";
    pub const GROUPS: &str = "groups";
    pub const SPLIT: &str = "split";
    pub const SHUFFLE: &str = "shuffle";
    pub const MODEL_INIT: &str = "model-init";
    pub const HOLDOUT: &str = "holdout";
}

/// Independent generator for `(seed, name)`; the name selects a ChaCha stream.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
