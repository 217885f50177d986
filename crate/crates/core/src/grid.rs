use crate::error::{Error, Result};

/// Square patch grid laid over a square image.
///
/// Patches are indexed row-major: index `row * L + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    patches_per_axis: usize,
    patch_size: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            patches_per_axis: 14,
            patch_size: 16,
        }
    }
}

impl GridSpec {
    pub fn new(patches_per_axis: usize, patch_size: usize) -> Result<Self> {
        if patches_per_axis == 0 || patch_size == 0 {
            return Err(Error::Config(format!(
                "grid needs positive patches_per_axis and patch_size, got {patches_per_axis} and {patch_size}"
            )));
        }
        Ok(GridSpec {
            patches_per_axis,
            patch_size,
        })
    }

    /// Builds a grid from an image size, requiring it to divide evenly.
    pub fn from_image_size(image_size: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || image_size % patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {image_size} is not a multiple of patch size {patch_size}"
            )));
        }
        Self::new(image_size / patch_size, patch_size)
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.patches_per_axis
    }

    #[inline]
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    #[inline]
    pub fn image_size(&self) -> usize {
        self.patches_per_axis * self.patch_size
    }

    #[inline]
    pub fn num_patches(&self) -> usize {
        self.patches_per_axis * self.patches_per_axis
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.patches_per_axis + col
    }

    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.patches_per_axis, index % self.patches_per_axis)
    }

    pub fn is_border(&self, index: usize) -> bool {
        let (r, c) = self.row_col(index);
        let last = self.patches_per_axis - 1;
        r == 0 || c == 0 || r == last || c == last
    }
}
