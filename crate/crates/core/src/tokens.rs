//! CLS routing and the border-patch drop rule.
//!
//! The CLS token has no grid position, so masking cannot place it. Instead a
//! Bernoulli draw `b ~ Bernoulli(p_source)` appends it to the source set
//! (`b = 1`) or to the target set (`b = 0`). With stripe masks, joining the
//! source costs one patch: the last row-major source patch is dropped so that
//! every sample in a batch carries `w*L` source tokens. For a full-span stripe
//! that patch always sits on the grid border.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::maskgen::MaskPair;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsPolicy {
    /// Probability that CLS joins the source set.
    pub p_source: f64,
    /// When false the CLS token takes no part in training (plain JEPA).
    pub enabled: bool,
    /// Drop the last source patch when CLS joins a stripe source.
    pub border_drop: bool,
}

impl Default for ClsPolicy {
    fn default() -> Self {
        ClsPolicy {
            p_source: 0.5,
            enabled: true,
            border_drop: true,
        }
    }
}

impl ClsPolicy {
    pub fn with_p(p_source: f64) -> Self {
        ClsPolicy {
            p_source,
            ..Default::default()
        }
    }

    pub fn disabled() -> Self {
        ClsPolicy {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_source) {
            return Err(Error::Config(format!(
                "CLS source probability must lie in [0, 1], got {}",
                self.p_source
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClsSide {
    Source,
    Target,
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenPartition {
    mask: MaskPair,
    cls: ClsSide,
    dropped_patch: Option<usize>,
}

impl TokenPartition {
    pub fn new(mask: MaskPair, cls: ClsSide) -> Self {
        TokenPartition {
            mask,
            cls,
            dropped_patch: None,
        }
    }

    pub fn mask(&self) -> &MaskPair {
        &self.mask
    }

    pub fn cls(&self) -> ClsSide {
        self.cls
    }

    pub fn cls_in_source(&self) -> bool {
        self.cls == ClsSide::Source
    }

    pub fn cls_in_target(&self) -> bool {
        self.cls == ClsSide::Target
    }

    pub fn dropped_patch(&self) -> Option<usize> {
        self.dropped_patch
    }

    /// Source patches that reach the encoder.
    pub fn source_patches(&self) -> &[usize] {
        let src = self.mask.source();
        match self.dropped_patch {
            Some(_) => &src[..src.len() - 1],
            None => src,
        }
    }

    pub fn target_patches(&self) -> &[usize] {
        self.mask.target()
    }

    /// Source token count including CLS when it sits on the source side.
    pub fn source_len(&self) -> usize {
        self.source_patches().len() + self.cls_in_source() as usize
    }

    pub fn target_len(&self) -> usize {
        self.target_patches().len() + self.cls_in_target() as usize
    }
}

/// Routes CLS by a Bernoulli draw, then applies the border drop for stripe
/// masks when the policy asks for it.
pub fn assign_cls<R: Rng + ?Sized>(
    mask: MaskPair,
    policy: &ClsPolicy,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<TokenPartition> {
    policy.validate()?;
    if !policy.enabled {
        return Ok(TokenPartition::new(mask, ClsSide::Excluded));
    }
    let b = rng.random_bool(policy.p_source);
    let side = if b { ClsSide::Source } else { ClsSide::Target };
    let drop = b && policy.border_drop && mask.is_stripe();
    let partition = TokenPartition::new(mask, side);
    if drop {
        apply_border_drop(partition, grid)
    } else {
        Ok(partition)
    }
}

/// Removes the last row-major source patch when CLS is on the source side.
///
/// For stripe masks the removed patch must lie on the grid border; anything
/// else means the stripe generator is broken.
pub fn apply_border_drop(partition: TokenPartition, grid: &GridSpec) -> Result<TokenPartition> {
    if !partition.cls_in_source() {
        return Ok(partition);
    }
    if partition.dropped_patch.is_some() {
        return Err(Error::InvalidArgument("border patch already dropped".into()));
    }
    let last = *partition
        .mask
        .source()
        .last()
        .ok_or_else(|| Error::InvalidArgument("source set is empty".into()))?;
    if partition.mask.is_stripe() && !grid.is_border(last) {
        return Err(Error::BorderViolation { index: last });
    }
    Ok(TokenPartition {
        dropped_patch: Some(last),
        ..partition
    })
}
