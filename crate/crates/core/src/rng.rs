//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, purpose, step, index)`. Two streams with different addresses are
//! independent, and the same address always yields the same sequence, so the
//! order in which worker threads visit particles has no effect on the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes used by the samplers and metrics. Callers may define their own
/// values above [`Purpose::USER`].
pub struct Purpose;

impl Purpose {
    pub const INIT: u64 = 1;
    pub const PROPOSE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const PROPAGATE: u64 = 4;
    pub const FINAL: u64 = 5;
    pub const MIXTURE: u64 = 6;
    pub const OBSERVED_PATH: u64 = 7;
    pub const PROJECTION: u64 = 16;
    pub const SUBSAMPLE: u64 = 17;
    pub const PRIOR: u64 = 32;
    pub const PROBLEM: u64 = 33;
    pub const SAMPLES: u64 = 34;
    pub const USER: u64 = 1 << 32;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root of a family of reproducible streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    /// Derives a child seed, e.g. one per replicate or per experiment case.
    pub fn child(self, tag: u64) -> StreamSeed {
        StreamSeed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Generator for one `(purpose, step, index)` address.
    pub fn stream(self, purpose: u64, step: u64, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.0) ^ splitmix64(purpose.rotate_left(17));
        state = splitmix64(state ^ step.wrapping_mul(0xd1b5_4a32_d192_ed03));
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
