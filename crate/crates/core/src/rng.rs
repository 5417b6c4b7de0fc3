//! Deterministic RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from the
//! master seed plus a short list of integer tags (purpose, trajectory id,
//! epoch, and so on). A stream is a pure function of (seed, tags), so work
//! items can be processed in any order, or in parallel, without changing a
//! single drawn value.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags for substream derivation. Keeping them in one table avoids
/// accidental collisions between modules.
pub mod purpose {
    /// Per-trajectory simulation noise, tagged with the trajectory id.
    pub const TRAJECTORY: u64 = 1;
    /// Network weight initialization, tagged with the parameter block index.
    pub const INIT: u64 = 2;
    /// Minibatch shuffling, tagged with the epoch.
    pub const SHUFFLE: u64 = 3;
    /// Monte Carlo latent draws during training, tagged with (epoch, step, slot).
    pub const TRAIN_MC: u64 = 4;
    /// Monte Carlo latent draws at evaluation, tagged with the trajectory id.
    pub const EVAL_MC: u64 = 5;
    /// Synthetic data used only by tests.
    pub const TEST: u64 = 100;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha stream from a master seed and a tag list.
///
/// The same (seed, tags) pair always yields the same stream; distinct tag
/// lists yield streams that are independent for every practical purpose.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut h = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(h);
    rng.set_stream(splitmix64(h ^ 0xa076_1d64_78bd_642f));
    rng
}
