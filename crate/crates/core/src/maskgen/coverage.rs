use super::MaskStrategy;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use ndarray::Array2;
use rand::Rng;

/// Per-patch probability of landing in the source set, estimated by sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    pub probs: Array2<f64>,
    pub samples: usize,
}

impl CoverageMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[[row, col]]
    }

    /// Mean over the four corner patches.
    pub fn corner_mean(&self) -> f64 {
        let l = self.probs.nrows() - 1;
        (self.get(0, 0) + self.get(0, l) + self.get(l, 0) + self.get(l, l)) / 4.0
    }

    /// Mean over the central patch (odd L) or central 2x2 block (even L).
    pub fn center_mean(&self) -> f64 {
        let l = self.probs.nrows();
        let (lo, hi) = if l % 2 == 0 { (l / 2 - 1, l / 2) } else { (l / 2, l / 2) };
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in lo..=hi {
            for c in lo..=hi {
                sum += self.get(r, c);
                n += 1.0;
            }
        }
        sum / n
    }
}

pub fn coverage_map<R: Rng + ?Sized>(
    strategy: &MaskStrategy,
    grid: &GridSpec,
    n_samples: usize,
    rng: &mut R,
) -> Result<CoverageMap> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("coverage needs at least one sample".into()));
    }
    strategy.validate(grid)?;
    let l = grid.side();
    let mut counts = vec![0u64; grid.num_patches()];
    for _ in 0..n_samples {
        let m = strategy.sample(grid, rng)?;
        for &i in m.source() {
            counts[i] += 1;
        }
    }
    let probs = Array2::from_shape_fn((l, l), |(r, c)| {
        counts[grid.index(r, c)] as f64 / n_samples as f64
    });
    Ok(CoverageMap {
        probs,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_samples_rejected() {
        let g = GridSpec::default();
        assert!(coverage_map(&MaskStrategy::Quadrant, &g, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn entries_are_probabilities() {
        let g = GridSpec::default();
        let cov = coverage_map(&MaskStrategy::default(), &g, 500, &mut seeded(0)).unwrap();
        assert!(cov.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        // Each stripe covers 3*14 patches, so the map sums to 42 exactly.
        assert!((cov.probs.sum() - 42.0).abs() < 1e-9);
    }
}
