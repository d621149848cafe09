//! Deterministic sub-stream derivation.
//!
//! Every randomized component of a run draws from its own named stream so
//! that disabling one component (e.g. the guide when no demonstrated
//! actions survive masking) leaves every other stream untouched. This is
//! what makes an action-free AGAIL run bitwise-identical to state-GAIL.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named purposes for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    PolicyInit,
    DiscriminatorInit,
    GuideInit,
    Rollout,
    DiscriminatorSample,
    GuideSample,
    RewardPair,
    Eval,
    Record,
    Mask,
    Other(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::PolicyInit => 1,
            Stream::DiscriminatorInit => 2,
            Stream::GuideInit => 3,
            Stream::Rollout => 4,
            Stream::DiscriminatorSample => 5,
            Stream::GuideSample => 6,
            Stream::RewardPair => 7,
            Stream::Eval => 8,
            Stream::Record => 9,
            Stream::Mask => 10,
            Stream::Other(n) => 1000 + n,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent RNG for `(seed, stream)`.
pub fn sub_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream.id())))
}
