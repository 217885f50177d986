//! Source/target partitions of the patch grid.
//!
//! Three strategies are available: axial stripes (the default), quadrants and
//! JEPA-style multiblock. All of them return a [`MaskPair`] whose two index
//! lists partition `0..L²`.

mod coverage;
mod multiblock;
mod quadrant;
mod stripe;

pub use coverage::{coverage_map, CoverageMap};
pub use multiblock::{
    multiblock_from_blocks, sample_multiblock_mask, sample_multiblock_mode, Block,
    MultiblockConfig, MultiblockParams,
};
pub use quadrant::{quadrant_mask, sample_quadrant_mask, Quadrant};
pub use stripe::{
    sample_stripe_center, stripe_mask, stripe_window_start, sample_stripe_mask, Orientation,
    OrientationPolicy, StripeParams,
};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use rand::Rng;

/// Which strategy produced a mask, with the strategy-specific outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrigin {
    Stripe {
        orientation: Orientation,
        center: usize,
        start: usize,
        width: usize,
    },
    Quadrant(Quadrant),
    Multiblock,
    /// Built by hand, e.g. in tests.
    Explicit,
}

/// Disjoint, exhaustive, non-empty split of the patch grid.
///
/// Both lists are strictly increasing row-major indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    source: Vec<usize>,
    target: Vec<usize>,
    origin: MaskOrigin,
}

impl MaskPair {
    /// Validates and builds a pair from explicit index lists.
    pub fn new(grid: &GridSpec, source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        Self::with_origin(grid, source, target, MaskOrigin::Explicit)
    }

    pub(crate) fn with_origin(
        grid: &GridSpec,
        source: Vec<usize>,
        target: Vec<usize>,
        origin: MaskOrigin,
    ) -> Result<Self> {
        let n = grid.num_patches();
        if source.is_empty() || target.is_empty() {
            return Err(Error::InvalidArgument(
                "source and target must both be non-empty".into(),
            ));
        }
        for list in [&source, &target] {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "mask index lists must be strictly increasing".into(),
                ));
            }
            if list.last().is_some_and(|&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "mask index out of range for {n} patches"
                )));
            }
        }
        if source.len() + target.len() != n {
            return Err(Error::InvalidArgument(format!(
                "mask covers {} of {n} patches",
                source.len() + target.len()
            )));
        }
        // Sorted, in range, and sized n: disjoint iff the merged lists cover every index.
        let mut seen = vec![false; n];
        for &i in source.iter().chain(&target) {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "patch {i} is in both source and target"
                )));
            }
        }
        Ok(MaskPair {
            source,
            target,
            origin,
        })
    }

    /// Builds a pair from a per-patch membership flag (`true` = source).
    pub(crate) fn from_source_flags(
        grid: &GridSpec,
        in_source: &[bool],
        origin: MaskOrigin,
    ) -> Result<Self> {
        let (mut source, mut target) = (Vec::new(), Vec::new());
        for (i, &s) in in_source.iter().enumerate() {
            if s {
                source.push(i);
            } else {
                target.push(i);
            }
        }
        Self::with_origin(grid, source, target, origin)
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn origin(&self) -> MaskOrigin {
        self.origin
    }

    pub fn is_stripe(&self) -> bool {
        matches!(self.origin, MaskOrigin::Stripe { .. })
    }
}

/// A masking strategy with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskStrategy {
    Stripe(StripeParams),
    Quadrant,
    Multiblock(MultiblockConfig),
}

impl Default for MaskStrategy {
    fn default() -> Self {
        MaskStrategy::Stripe(StripeParams::default())
    }
}

impl MaskStrategy {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            MaskStrategy::Stripe(p) => p.validate(grid),
            MaskStrategy::Quadrant => {
                if grid.side() % 2 != 0 {
                    Err(Error::Config(format!(
                        "quadrant masking needs an even grid, got L={}",
                        grid.side()
                    )))
                } else {
                    Ok(())
                }
            }
            MaskStrategy::Multiblock(cfg) => cfg.validate(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, grid: &GridSpec, rng: &mut R) -> Result<MaskPair> {
        match self {
            MaskStrategy::Stripe(p) => sample_stripe_mask(grid, p, rng),
            MaskStrategy::Quadrant => sample_quadrant_mask(grid, rng),
            MaskStrategy::Multiblock(cfg) => sample_multiblock_mask(grid, cfg, rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Stripe(_) => "stripe",
            MaskStrategy::Quadrant => "quadrant",
            MaskStrategy::Multiblock(_) => "multiblock",
        }
    }
}
