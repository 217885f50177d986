use super::{MaskOrigin, MaskPair};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::sampling::{Rounding, TruncatedNormal};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `width` consecutive rows spanning every column.
    Horizontal,
    /// `width` consecutive columns spanning every row.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationPolicy {
    #[default]
    Random,
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripeParams {
    pub width: usize,
    /// Spread coefficient: the parent normal has std `L * k`.
    pub center_spread: f64,
    pub orientation: OrientationPolicy,
    pub rounding: Rounding,
}

impl Default for StripeParams {
    fn default() -> Self {
        StripeParams {
            width: 3,
            center_spread: 0.175,
            orientation: OrientationPolicy::Random,
            rounding: Rounding::HalfEven,
        }
    }
}

impl StripeParams {
    pub fn with_width(width: usize) -> Self {
        StripeParams {
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let l = grid.side();
        if l < 2 {
            return Err(Error::Config("stripe masking needs L >= 2".into()));
        }
        if self.width == 0 || self.width >= l {
            return Err(Error::Config(format!(
                "stripe width must lie in 1..={} for L={l}, got {}",
                l - 1,
                self.width
            )));
        }
        if !(self.center_spread > 0.0) || !self.center_spread.is_finite() {
            return Err(Error::Config(format!(
                "stripe center spread must be positive, got {}",
                self.center_spread
            )));
        }
        Ok(())
    }
}

/// Draws the stripe center: a normal with mean `(L-1)/2` and std `L*k`,
/// truncated to `[0, L-1]`, then rounded to a patch index.
pub fn sample_stripe_center<R: Rng + ?Sized>(
    side: usize,
    spread: f64,
    rounding: Rounding,
    rng: &mut R,
) -> usize {
    let last = (side - 1) as f64;
    let dist = TruncatedNormal::new(last / 2.0, side as f64 * spread, 0.0, last);
    let x = rounding.apply(dist.sample(rng));
    x.clamp(0.0, last) as usize
}

/// First row/column of a `width`-wide window centered on `center`, shifted
/// inward so the window never leaves the grid.
pub fn stripe_window_start(side: usize, width: usize, center: usize) -> usize {
    center.saturating_sub(width / 2).min(side - width)
}

/// Deterministic stripe mask for a given orientation and center.
pub fn stripe_mask(
    grid: &GridSpec,
    width: usize,
    orientation: Orientation,
    center: usize,
) -> Result<MaskPair> {
    let l = grid.side();
    if width == 0 || width >= l {
        return Err(Error::InvalidArgument(format!(
            "stripe width {width} leaves no target on a {l}x{l} grid"
        )));
    }
    if center >= l {
        return Err(Error::InvalidArgument(format!(
            "stripe center {center} outside 0..{l}"
        )));
    }
    let start = stripe_window_start(l, width, center);
    let window = start..start + width;
    let flags: Vec<bool> = (0..grid.num_patches())
        .map(|i| {
            let (r, c) = grid.row_col(i);
            match orientation {
                Orientation::Horizontal => window.contains(&r),
                Orientation::Vertical => window.contains(&c),
            }
        })
        .collect();
    MaskPair::from_source_flags(
        grid,
        &flags,
        MaskOrigin::Stripe {
            orientation,
            center,
            start,
            width,
        },
    )
}

pub fn sample_stripe_mask<R: Rng + ?Sized>(
    grid: &GridSpec,
    params: &StripeParams,
    rng: &mut R,
) -> Result<MaskPair> {
    params.validate(grid)?;
    let orientation = match params.orientation {
        OrientationPolicy::Horizontal => Orientation::Horizontal,
        OrientationPolicy::Vertical => Orientation::Vertical,
        OrientationPolicy::Random => {
            if rng.random_bool(0.5) {
                Orientation::Horizontal
            } else {
                Orientation::Vertical
            }
        }
    };
    let center = sample_stripe_center(grid.side(), params.center_spread, params.rounding, rng);
    stripe_mask(grid, params.width, orientation, center)
}
