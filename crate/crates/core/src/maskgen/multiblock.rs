use super::{MaskOrigin, MaskPair};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use rand::Rng;

/// One family of rectangles: how many, how large, what shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiblockParams {
    pub num_blocks: usize,
    /// Block area as a fraction of the grid, sampled uniformly.
    pub scale_range: (f64, f64),
    /// Block width/height, sampled uniformly.
    pub aspect_range: (f64, f64),
}

impl MultiblockParams {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.scale_range;
        let (a0, a1) = self.aspect_range;
        if self.num_blocks == 0 {
            return Err(Error::Config("multiblock needs at least one block".into()));
        }
        if !(s0 > 0.0 && s0 <= s1 && s1 < 1.0) {
            return Err(Error::Config(format!(
                "multiblock scale range must satisfy 0 < lo <= hi < 1, got ({s0}, {s1})"
            )));
        }
        if !(a0 > 0.0 && a0 <= a1 && a1.is_finite()) {
            return Err(Error::Config(format!(
                "multiblock aspect range must be positive, got ({a0}, {a1})"
            )));
        }
        Ok(())
    }
}

/// Mixture of multiblock modes, one chosen uniformly per sample.
///
/// The union of the chosen mode's rectangles forms the target; the
/// complement is the source.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiblockConfig {
    pub modes: Vec<MultiblockParams>,
    pub resample_budget: usize,
}

impl Default for MultiblockConfig {
    /// Many small blocks or one large block, with equal probability.
    fn default() -> Self {
        MultiblockConfig {
            modes: vec![
                MultiblockParams {
                    num_blocks: 4,
                    scale_range: (0.15, 0.2),
                    aspect_range: (0.75, 1.5),
                },
                MultiblockParams {
                    num_blocks: 1,
                    scale_range: (0.3, 0.45),
                    aspect_range: (0.75, 1.5),
                },
            ],
            resample_budget: 100,
        }
    }
}

impl MultiblockConfig {
    pub fn single(params: MultiblockParams) -> Self {
        MultiblockConfig {
            modes: vec![params],
            resample_budget: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("multiblock needs at least one mode".into()));
        }
        if self.resample_budget == 0 {
            return Err(Error::Config("multiblock resample budget must be positive".into()));
        }
        self.modes.iter().try_for_each(MultiblockParams::validate)
    }
}

/// Axis-aligned rectangle of patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn sample_block<R: Rng + ?Sized>(grid: &GridSpec, p: &MultiblockParams, rng: &mut R) -> Block {
    let l = grid.side();
    let area = rng.random_range(p.scale_range.0..=p.scale_range.1) * grid.num_patches() as f64;
    let aspect = rng.random_range(p.aspect_range.0..=p.aspect_range.1);
    let height = ((area / aspect).sqrt().round() as usize).clamp(1, l);
    let width = ((area * aspect).sqrt().round() as usize).clamp(1, l);
    let top = rng.random_range(0..=l - height);
    let left = rng.random_range(0..=l - width);
    Block {
        top,
        left,
        height,
        width,
    }
}

/// Mask whose target is the union of `blocks`.
pub fn multiblock_from_blocks(grid: &GridSpec, blocks: &[Block]) -> Result<MaskPair> {
    let l = grid.side();
    let mut in_source = vec![true; grid.num_patches()];
    for b in blocks {
        if b.height == 0 || b.width == 0 || b.top + b.height > l || b.left + b.width > l {
            return Err(Error::InvalidArgument(format!("block {b:?} outside the grid")));
        }
        for r in b.top..b.top + b.height {
            for c in b.left..b.left + b.width {
                in_source[grid.index(r, c)] = false;
            }
        }
    }
    MaskPair::from_source_flags(grid, &in_source, MaskOrigin::Multiblock)
}

/// Samples one multiblock mask from a single mode.
pub fn sample_multiblock_mode<R: Rng + ?Sized>(
    grid: &GridSpec,
    params: &MultiblockParams,
    budget: usize,
    rng: &mut R,
) -> Result<MaskPair> {
    params.validate()?;
    for _ in 0..budget {
        let blocks: Vec<Block> = (0..params.num_blocks)
            .map(|_| sample_block(grid, params, rng))
            .collect();
        if let Ok(pair) = multiblock_from_blocks(grid, &blocks) {
            return Ok(pair);
        }
    }
    Err(Error::ResampleBudget { budget })
}

pub fn sample_multiblock_mask<R: Rng + ?Sized>(
    grid: &GridSpec,
    config: &MultiblockConfig,
    rng: &mut R,
) -> Result<MaskPair> {
    config.validate()?;
    let mode = &config.modes[rng.random_range(0..config.modes.len())];
    sample_multiblock_mode(grid, mode, config.resample_budget, rng)
}
