//! Sources of standard-normal draws. Samplers take a source rather than a
//! seed so tests can substitute fixed values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait NoiseSource {
    /// Overwrites `out` with independent draws.
    fn fill(&mut self, out: &mut [f64]);
}

/// Seeded i.i.d. `N(0, 1)`.
#[derive(Clone, Debug)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        GaussianNoise {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl NoiseSource for GaussianNoise {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }
}

/// Every draw equals the given constant.
#[derive(Clone, Copy, Debug)]
pub struct ConstantNoise(pub f64);

impl NoiseSource for ConstantNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(self.0);
    }
}
