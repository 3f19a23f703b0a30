//! Zero-shot anomaly localization for stationary textures.
//!
//! Every pixel of a single textured image is scored by comparing the
//! statistics of the local feature patches it belongs to against a reference
//! drawn from the same image. The crate covers the whole algorithmic path:
//!
//! * [`tensor`]: dense feature/score grids, Gaussian kernels, resampling.
//! * [`features`]: classic extractors (colors, random projections,
//!   steerable filters, Laws texture energy).
//! * [`statistics`]: patch comparators (moments, histogram, sample-weighted
//!   Wasserstein and feature correspondence analysis).
//! * [`references`]: reference selection (global aggregates, rank-wise
//!   median, random patches, k nearest patches).
//! * [`pipeline`]: the end-to-end localizer and its presets.
//! * [`metrics`]: pixel AUROC, PRO, max-F1 and image AUROC.
//! * [`fmap`]: the little-endian `FMP1` feature map container.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature spreads the dense loops over a rayon
//! pool; results do not depend on the number of threads.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;
mod par;

pub mod features;
pub mod fmap;
pub mod metrics;
pub mod pipeline;
pub mod references;
pub mod statistics;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use features::{ExtractorKind, ExtractorSpec};
pub use metrics::{EvalReport, LabeledScores};
pub use pipeline::{Comparator, PipelineConfig, Preset};
pub use references::{Reference, ReferenceSpec, ReferenceStrategy};
pub use statistics::{NonComplianceMap, PatchConfig, SortedReference};
pub use tensor::{AnomalyMap, FeatureMap, GaussianKernel, Mask, RgbImage};
