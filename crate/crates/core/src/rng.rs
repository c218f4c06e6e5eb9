//! Deterministic random streams.
//!
//! Every stochastic draw in the crate comes from a stream derived from a root
//! seed and a tuple of integer tags (particle index, step, sample index, ...).
//! Streams derived from distinct tag tuples are independent, so serial and
//! parallel execution consume identical randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Stream tags reserved for the different consumers inside one steering run.
pub mod tag {
    pub const FORWARD: u64 = 0x46_57_44;
    pub const PROPOSE: u64 = 0x50_52_50;
    pub const RESAMPLE: u64 = 0x52_53_4d;
    pub const SELECT: u64 = 0x53_45_4c;
    pub const CORRUPT: u64 = 0x43_52_50;
    pub const SAMPLE: u64 = 0x53_4d_50;
    pub const ADAPT: u64 = 0x41_44_50;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a tag tuple into a child seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn substream(seed: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tags))
}

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}
