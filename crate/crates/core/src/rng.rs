//! Counter-based seed derivation.
//!
//! Every random stream in a run (trial sampling, fold splits, per-fold
//! training, restarts, dropout masks) is keyed by the master seed plus a
//! path of integers, e.g. `[TRIAL, 3, FOLD, 1]`. A stream's seed is the
//! SplitMix64 hash chain over that path, so streams do not depend on the
//! order in which jobs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeqRng = ChaCha8Rng;

pub const TRIAL: u64 = 1;
pub const FOLD: u64 = 2;
pub const RESTART: u64 = 3;
pub const INIT: u64 = 4;
pub const BATCH: u64 = 5;
pub const DROPOUT: u64 = 6;
pub const SPLIT: u64 = 7;
pub const EMBED: u64 = 8;
pub const SAMPLE: u64 = 9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> SeqRng {
    SeqRng::seed_from_u64(derive_seed(master, path))
}
