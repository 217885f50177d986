//! Face-centric joint-embedding predictive pretraining.
//!
//! The crate covers the whole desk-scale pipeline: patch-grid masking
//! ([`maskgen`]), radial loss weights ([`lossweights`]), CLS routing
//! ([`tokens`]), a compact ViT encoder and predictor ([`vit`]), the training
//! loop ([`trainer`]), frozen-feature probes ([`probe`]), face cropping
//! ([`preprocess`]) and a procedural face generator ([`synthdata`]).

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod export;
pub mod features;
pub mod grid;
pub mod image;
pub mod kv;
pub mod lossweights;
pub mod maskgen;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod probe;
pub mod rng;
pub mod sampling;
pub mod synthdata;
pub mod tokens;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
pub use grid::GridSpec;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/masking.md")]
    mod masking {}
    #[doc = include_str!("../../../book/src/cls-routing.md")]
    mod cls_routing {}
    #[doc = include_str!("../../../book/src/loss-weights.md")]
    mod loss_weights {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
