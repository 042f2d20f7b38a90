//! Semi-automatic vegetation mapping from UAV RGB imagery.
//!
//! The crate covers the full path from an expert-painted cover mask to a
//! per-tile species map:
//!
//! - [`imaging`]: HSV conversion, masks, hue spectra and hue-range filtering.
//! - [`tiling`]: grid tiles with diagonal shifts and overlay-threshold selection.
//! - [`features`]: the baseline tile embedder, external embeddings, feature
//!   ranking, cosine clustering and neighbour suggestion.
//! - [`learners`]: six classifiers, stratified cross-validation, metrics,
//!   confusion matrices, leave-one-out validation and focus-class coverage.
//! - [`mapper`]: whole-image prediction maps, overlays and area statistics.
//! - [`synthfield`]: seeded synthetic field scenes with pixel ground truth.

pub mod error;
pub mod features;
pub mod imaging;
pub mod learners;
pub mod mapper;
pub mod synthfield;
pub mod tiling;

pub use error::{Error, Result};
