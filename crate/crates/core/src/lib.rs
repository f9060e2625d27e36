//! Volumetric super-resolution forests.
//!
//! The crate learns locally linear mappings from low-resolution 3-D patch
//! descriptors to high-frequency residual patches with a random regression
//! forest, and applies them to upscale volumes. Everything here is pure
//! computation over in-memory volumes; file formats, phantoms and the
//! command-line driver live in the `vsrf` crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature (on by default) spreads tree
//! training, feature extraction and inference over a rayon pool; results
//! are bit-identical with or without it.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod features;
pub mod filter;
pub mod forest;
pub mod linalg;
pub mod metrics;
pub mod patch;
pub mod pca;
pub mod pipeline;
pub mod resample;
pub mod volume;

mod par;

pub use error::{Error, Result};
pub use features::{FeatureBank, FeatureSet};
pub use forest::{EnsembleMode, Forest, ForestConfig, LambdaPolicy, TrainingSet};
pub use metrics::{QualityReport, SsimMode};
pub use patch::PatchGrid;
pub use pca::PcaModel;
pub use pipeline::{DegradationSpec, InterpKernel, SrConfig, SrModel};
pub use volume::Volume;
