//! Color-space conversion, cover masks, hue spectra and hue-range filtering.

mod color;
mod ranges;
mod raster;
mod spectrum;

pub use color::{hsv_to_rgb, rgb_to_hsv, HsvPixel};
pub use ranges::{derive_hue_ranges, refine_mask, HueRangeSet, RefineOptions};
pub use raster::{CoverMask, RgbImage};
pub(crate) use raster::write_file;
pub use spectrum::{compute_hue_spectrum, HueSpectrum, DEFAULT_SAT_MIN, HUE_BINS};
