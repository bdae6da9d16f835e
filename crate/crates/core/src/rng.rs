//! Seed derivation.
//!
//! Every run has one root seed. Sub-seeds for scenes, episodes and policy
//! batches are derived with [`derive_seed`], a SplitMix64 counter mix over
//! the root and a path of stream identifiers. Work items therefore get the
//! same randomness regardless of the order they are processed in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used when deriving sub-seeds.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EPISODE: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const CLUSTER: u64 = 8;
    pub const ORACLE: u64 = 9;
    pub const START: u64 = 10;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of counters: `h = splitmix(h ^ splitmix(c))`
/// for each counter `c`, starting from `h = splitmix(root)`.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |h, &c| splitmix64(h ^ splitmix64(c)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_seed(root, path))
}
