//! Seed derivation.
//!
//! Every random draw in a run is traced back to one `u64` run seed. Child
//! seeds are derived as `split_seed(parent, stream, index)`, a SplitMix64
//! finaliser applied to the parent mixed with a stream tag and an index, so
//! streams never overlap in practice and no entropy is read from the OS.
//!
//! | stream            | index                  | used for                          |
//! |-------------------|------------------------|-----------------------------------|
//! | `POLICY_INIT`     | 0                      | policy weights                    |
//! | `CRITIC_INIT`     | 0 (reward), 1 (cost)   | critic weights                    |
//! | `MODEL_INIT`      | 0                      | world-model weights               |
//! | `TRAIN_ROLLOUT`   | iteration `k`          | training batch                    |
//! | `EVAL_ROLLOUT`    | iteration `k`          | fresh evaluation batch            |
//! | `EVAL_ROLLOUT`    | `u64::MAX`             | final evaluation of a run         |
//! | `CRITIC_SHUFFLE`  | iteration `k`          | minibatch order for critic/model  |
//! | `TRAJECTORY`      | trajectory index `i`   | per-trajectory reset / noise      |
//! | `NOISE`           | repetition / batch     | exploration noise                 |
//! | `ABLATION`        | repetition             | ablation draws                    |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POLICY_INIT: u64 = 0x01;
pub const CRITIC_INIT: u64 = 0x02;
pub const MODEL_INIT: u64 = 0x03;
pub const TRAIN_ROLLOUT: u64 = 0x10;
pub const EVAL_ROLLOUT: u64 = 0x11;
pub const CRITIC_SHUFFLE: u64 = 0x12;
pub const TRAJECTORY: u64 = 0x20;
pub const NOISE: u64 = 0x21;
pub const ABLATION: u64 = 0x30;

/// Index of the `EVAL_ROLLOUT` stream reserved for end-of-run evaluation.
pub const FINAL_EVAL: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(parent: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ stream.rotate_left(32)) ^ index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
