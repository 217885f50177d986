//! Frozen-encoder feature extraction and collapse statistics.

use crate::dataset::{load_many, Dataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ParamStore, Scalar};
use crate::vit::Encoder;
use ndarray::{Array1, Array2, Axis};

/// Per-image encoder output: the CLS embedding and one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub cls: Array1<f32>,
    pub patches: Array2<f32>,
}

impl TokenFeatures {
    pub fn mean_patch(&self) -> Array1<f32> {
        self.patches.mean_axis(Axis(0)).expect("at least one patch")
    }
}

/// Anything that maps an image to token features.
pub trait FeatureSource: Sync {
    fn dim(&self) -> usize;
    fn features(&self, image: &Image) -> Result<TokenFeatures>;
}

/// An encoder with fixed parameters. Extraction only reads the store.
#[derive(Debug, Clone, Copy)]
pub struct FrozenEncoder<'a, F> {
    pub encoder: &'a Encoder,
    pub store: &'a ParamStore<F>,
}

impl<F: Scalar> FeatureSource for FrozenEncoder<'_, F> {
    fn dim(&self) -> usize {
        self.encoder.embed_dim()
    }

    fn features(&self, image: &Image) -> Result<TokenFeatures> {
        let (cls, patches) = self.encoder.encode_full(self.store, image)?;
        Ok(TokenFeatures {
            cls: cls.mapv(|v| v.to_f64_lossy() as f32),
            patches: patches.mapv(|v| v.to_f64_lossy() as f32),
        })
    }
}

/// Features for `ids`, in order. Images are loaded and encoded in chunks so
/// memory stays bounded.
pub fn extract(
    source: &dyn FeatureSource,
    dataset: &dyn Dataset,
    ids: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<TokenFeatures>> {
    use rayon::prelude::*;
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(64) {
        let images = load_many(dataset, chunk, pool)?;
        let feats: Result<Vec<_>> = match pool {
            Some(p) if p.current_num_threads() > 1 => {
                p.install(|| images.par_iter().map(|img| source.features(img)).collect())
            }
            _ => images.iter().map(|img| source.features(img)).collect(),
        };
        out.extend(feats?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationStats {
    pub samples: usize,
    pub cls_mean: Vec<f64>,
    pub cls_std: Vec<f64>,
    pub pooled_mean: Vec<f64>,
    pub pooled_std: Vec<f64>,
    /// Mean per-dimension std of the mean-pooled patch embedding; zero means
    /// every image maps to the same vector.
    pub collapse_indicator: f64,
    /// The same quantity for the CLS embedding.
    pub cls_collapse_indicator: f64,
}

fn column_stats(rows: &[Array1<f32>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            let x = *v as f64 - m;
            *s += x * x;
        }
    }
    (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// Summary statistics over the first `n` images of `dataset`.
pub fn representation_stats(
    source: &dyn FeatureSource,
    dataset: &dyn Dataset,
    n: usize,
) -> Result<RepresentationStats> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "representation statistics need at least 2 samples, got {n}"
        )));
    }
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} samples from a dataset of {}",
            dataset.len()
        )));
    }
    let ids: Vec<usize> = (0..n).collect();
    let feats = extract(source, dataset, &ids, None)?;
    let cls: Vec<_> = feats.iter().map(|f| f.cls.clone()).collect();
    let pooled: Vec<_> = feats.iter().map(TokenFeatures::mean_patch).collect();
    let (cls_mean, cls_std) = column_stats(&cls);
    let (pooled_mean, pooled_std) = column_stats(&pooled);
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(RepresentationStats {
        samples: n,
        collapse_indicator: avg(&pooled_std),
        cls_collapse_indicator: avg(&cls_std),
        cls_mean,
        cls_std,
        pooled_mean,
        pooled_std,
    })
}
