//! Per-patch loss weights.
//!
//! The circular scheme down-weights patches by their distance from the image
//! center with a logistic falloff: `w(r) = 1 / (1 + exp(steepness * (r - r0)))`.
//! Central patches sit on the flat part of the curve near 1, corners fall
//! toward 0. The CLS token always carries weight 1.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Circular,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    /// Distance (patch units) at which the weight crosses 0.5.
    pub falloff_radius: f64,
    /// Logistic steepness (per patch unit).
    pub steepness: f64,
    pub scheme: WeightScheme,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            falloff_radius: 5.0,
            steepness: 1.5,
            scheme: WeightScheme::Circular,
        }
    }
}

impl WeightConfig {
    pub fn uniform() -> Self {
        WeightConfig {
            scheme: WeightScheme::Uniform,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.falloff_radius > 0.0 && self.falloff_radius.is_finite()) {
            return Err(Error::Config(format!(
                "falloff radius must be positive, got {}",
                self.falloff_radius
            )));
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            return Err(Error::Config(format!(
                "steepness must be positive, got {}",
                self.steepness
            )));
        }
        Ok(())
    }
}

/// Logistic falloff evaluated at distance `r`.
pub fn radial_weight(r: f64, falloff_radius: f64, steepness: f64) -> f64 {
    1.0 / (1.0 + (steepness * (r - falloff_radius)).exp())
}

/// Distance (patch units) from the center of patch `(row, col)` to the
/// geometric grid center.
pub fn patch_distance(grid: &GridSpec, row: usize, col: usize) -> f64 {
    let half = grid.side() as f64 / 2.0;
    let dy = row as f64 + 0.5 - half;
    let dx = col as f64 + 0.5 - half;
    dx.hypot(dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    weights: Array2<f64>,
}

impl WeightMatrix {
    pub const CLS_WEIGHT: f64 = 1.0;

    pub fn build(grid: &GridSpec, config: &WeightConfig) -> Result<Self> {
        config.validate()?;
        let l = grid.side();
        let weights = match config.scheme {
            WeightScheme::Uniform => Array2::ones((l, l)),
            WeightScheme::Circular => Array2::from_shape_fn((l, l), |(r, c)| {
                radial_weight(
                    patch_distance(grid, r, c),
                    config.falloff_radius,
                    config.steepness,
                )
            }),
        };
        Ok(WeightMatrix { weights })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn cls_weight(&self) -> f64 {
        Self::CLS_WEIGHT
    }

    pub fn side(&self) -> usize {
        self.weights.nrows()
    }

    /// Weight of a row-major patch index.
    pub fn patch(&self, index: usize) -> f64 {
        let l = self.side();
        self.weights[[index / l, index % l]]
    }

    /// Weights for a token sequence laid out as `[CLS?, patches...]`.
    pub fn token_weights(&self, with_cls: bool, patches: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(patches.len() + with_cls as usize);
        if with_cls {
            out.push(Self::CLS_WEIGHT);
        }
        out.extend(patches.iter().map(|&i| self.patch(i)));
        out
    }
}
