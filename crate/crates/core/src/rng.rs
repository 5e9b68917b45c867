//! Seeded random streams. Each consumer draws from its own ChaCha stream of
//! the same seed, so adding a consumer never shifts another one's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Noise,
    Weights,
    Shuffle,
    Teacher,
    Test,
    TestNoise,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Noise => 2,
            Stream::Weights => 3,
            Stream::Shuffle => 4,
            Stream::Teacher => 5,
            Stream::Test => 6,
            Stream::TestNoise => 7,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

pub fn standard_normal<T: Scalar>(rng: &mut Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::c(z)
}

pub fn fill_standard_normal<T: Scalar>(rng: &mut Rng, out: &mut [T]) {
    for x in out {
        *x = standard_normal(rng);
    }
}
