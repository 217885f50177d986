//! Scalar samplers shared by mask generation and parameter initialization.

use rand::Rng;
use rand_distr::StandardNormal;

/// Normal distribution restricted to `[low, high]`, sampled by rejection
/// from the parent normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std: f64,
    pub low: f64,
    pub high: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, std: f64, low: f64, high: f64) -> Self {
        assert!(std > 0.0 && low <= high);
        TruncatedNormal {
            mean,
            std,
            low,
            high,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Acceptance mass below ~1e-4 would spin; every caller in the crate
        // keeps the interval within a few std of the mean.
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = self.mean + self.std * z;
            if x >= self.low && x <= self.high {
                return x;
            }
        }
    }
}

/// How a continuous stripe center is snapped to a patch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Ties go to the even neighbour, so 6.5 becomes 6.
    #[default]
    HalfEven,
    /// Ties go away from zero, so 6.5 becomes 7.
    HalfAway,
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::HalfEven => x.round_ties_even(),
            Rounding::HalfAway => x.round(),
        }
    }
}
