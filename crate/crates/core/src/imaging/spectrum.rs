use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::color::rgb_to_hsv;
use super::raster::{ensure_same_dims, CoverMask, RgbImage};
use crate::error::{Error, Result};

pub const HUE_BINS: usize = 360;

/// Default saturation floor below which a pixel's hue is treated as noise.
pub const DEFAULT_SAT_MIN: f64 = 0.05;

/// Normalized 360-bin hue histogram; bin `i` covers hue `[i, i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueSpectrum {
    pub bins: Vec<f64>,
    pub pixel_count: u64,
}

impl HueSpectrum {
    /// Builds a normalized spectrum from raw per-bin counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.len() != HUE_BINS {
            return Err(Error::invalid(format!("expected {HUE_BINS} hue bins, got {}", counts.len())));
        }
        let total: u64 = counts.iter().sum();
        let bins = if total == 0 {
            vec![0.0; HUE_BINS]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Ok(Self {
            bins,
            pixel_count: total,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }

    /// Mass inside the inclusive bin range `[lo, hi]`.
    pub fn mass_between(&self, lo: u16, hi: u16) -> f64 {
        self.bins[lo as usize..=hi as usize].iter().sum()
    }

    /// Writes `bin,fraction` rows, one per bin.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin", "fraction"])?;
        for (i, f) in self.bins.iter().enumerate() {
            w.write_record([i.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a spectrum CSV. The pixel count is not stored in the file, so a
    /// non-empty spectrum reads back with `pixel_count = 1`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut bins = vec![0.0; HUE_BINS];
        let mut seen = 0usize;
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |col: usize| -> Result<&str> {
                rec.get(col).ok_or(Error::Parse {
                    row: row + 1,
                    column: col,
                    message: "missing cell".into(),
                })
            };
            let bin: usize = parse(0)?.trim().parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: 0,
                message: "bin is not an integer".into(),
            })?;
            let frac: f64 = parse(1)?.trim().parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: 1,
                message: "fraction is not a number".into(),
            })?;
            if bin >= HUE_BINS || !frac.is_finite() || frac < 0.0 {
                return Err(Error::Parse {
                    row: row + 1,
                    column: 0,
                    message: format!("invalid bin {bin} / fraction {frac}"),
                });
            }
            bins[bin] = frac;
            seen += 1;
        }
        if seen != HUE_BINS {
            return Err(Error::invalid(format!("spectrum CSV has {seen} rows, expected {HUE_BINS}")));
        }
        let nonzero = bins.iter().any(|&b| b > 0.0);
        Ok(Self {
            bins,
            pixel_count: u64::from(nonzero),
        })
    }
}

/// Hue histogram over masked pixels that carry a defined hue and saturation
/// at least `sat_min`.
pub fn compute_hue_spectrum(img: &RgbImage, mask: &CoverMask, sat_min: f64) -> Result<HueSpectrum> {
    ensure_same_dims(img, mask)?;
    if !(0.0..=1.0).contains(&sat_min) {
        return Err(Error::invalid(format!("sat_min must lie in [0, 1], got {sat_min}")));
    }
    let mut counts = vec![0u64; HUE_BINS];
    for (&px, &on) in img.pixels().iter().zip(mask.bits()) {
        if !on {
            continue;
        }
        let hsv = rgb_to_hsv(px);
        if hsv.hue_defined && hsv.s >= sat_min {
            counts[hsv.hue_bin()] += 1;
        }
    }
    HueSpectrum::from_counts(&counts)
}
