//! Image sources for training and probing. Every source hands out
//! standardized images at the grid resolution.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::image::Image;
use crate::synthdata::{FaceAttributes, SynthConfig};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

pub trait Dataset: Sync {
    fn len(&self) -> usize;

    /// Standardized image `index`.
    fn load(&self, index: usize) -> Result<Image>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Procedural faces, rendered on demand.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    config: SynthConfig,
    len: usize,
}

impl SynthDataset {
    pub fn new(config: SynthConfig, len: usize) -> Self {
        SynthDataset { config, len }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn attributes(&self, index: usize) -> FaceAttributes {
        self.config.attributes(index)
    }
}

impl Dataset for SynthDataset {
    fn len(&self) -> usize {
        self.len
    }

    fn load(&self, index: usize) -> Result<Image> {
        if index >= self.len {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for {} images",
                self.len
            )));
        }
        Ok(self.config.generate(index).0.normalized())
    }
}

/// PNG files from a directory, sorted by name and resized to the grid.
#[derive(Debug, Clone)]
pub struct ImageFolder {
    paths: Vec<PathBuf>,
    grid: GridSpec,
}

impl ImageFolder {
    pub fn open(dir: &Path, grid: GridSpec) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        Ok(ImageFolder { paths, grid })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl Dataset for ImageFolder {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<Image> {
        let path = self
            .paths
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range")))?;
        let img = Image::load_png(path)?;
        let s = self.grid.image_size();
        let img = if img.height == s && img.width == s {
            img
        } else {
            img.resize_bilinear(s, s)
        };
        Ok(img.normalized())
    }
}

/// Already standardized images held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemory {
    pub images: Vec<Image>,
}

impl Dataset for InMemory {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn load(&self, index: usize) -> Result<Image> {
        self.images
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range")))
    }
}

/// Loads `ids` in order, in parallel when a pool is given. The result does
/// not depend on the pool size.
pub fn load_many(
    dataset: &dyn Dataset,
    ids: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<Image>> {
    match pool {
        Some(pool) if pool.current_num_threads() > 1 => {
            pool.install(|| ids.par_iter().map(|&i| dataset.load(i)).collect())
        }
        _ => ids.iter().map(|&i| dataset.load(i)).collect(),
    }
}

pub fn worker_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}
