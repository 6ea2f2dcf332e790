//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a [`SimRng`] obtained by
//! [`stream`]: a ChaCha8 generator keyed by a master seed and a path of
//! integer tags (e.g. `[GROUP_NOISE, group_id, arm]`). Distinct paths give
//! statistically independent generators, so work can be split across threads
//! or trials without changing any individual draw.
//!
//! Key derivation: the master seed and each tag are folded through SplitMix64
//! (`state = mix(state ^ mix(tag + i·φ))`), and four further SplitMix64
//! outputs fill the 256-bit ChaCha key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Tags used as the first path element of each substream family.
pub mod tags {
    pub const STATIONARY_GAME: u64 = 0x10;
    pub const STATIONARY_MEANS: u64 = 0x11;
    pub const STATIONARY_REWARD: u64 = 0x12;
    pub const GROUP_NOISE: u64 = 0x20;
    pub const GROUP_REWARD: u64 = 0x21;
    pub const RUN_ENV: u64 = 0x30;
    pub const RUN_AGENT: u64 = 0x31;
    pub const RUN_SUBJECT: u64 = 0x32;
    pub const MCMC_CHAIN: u64 = 0x40;
    pub const MCMC_SUBJECT: u64 = 0x41;
    pub const MCMC_GROUP: u64 = 0x42;
    pub const MCMC_INIT: u64 = 0x43;
    pub const LOO_PROPOSAL: u64 = 0x50;
    pub const SESSION: u64 = 0x60;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed and a tag path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(seed);
    for (i, &tag) in path.iter().enumerate() {
        let salted = tag.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN));
        state = splitmix(state ^ splitmix(salted));
    }
    state
}

/// Independent generator for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> SimRng {
    let mut state = derive(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
