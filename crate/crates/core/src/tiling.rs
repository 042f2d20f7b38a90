//! Grid tiling with diagonal shifts and overlay-threshold tile selection.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{CoverMask, RgbImage};

pub const DEFAULT_TILE_SIZES: [u32; 3] = [64, 128, 256];
pub const DEFAULT_SHIFTS: u32 = 3;

/// Square tile footprint inside a named image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileSpec {
    pub image_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl TileSpec {
    pub fn new(image_id: impl Into<String>, x: u32, y: u32, size: u32) -> Self {
        Self {
            image_id: image_id.into(),
            x,
            y,
            size,
        }
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        let fits = self.size > 0
            && u64::from(self.x) + u64::from(self.size) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.size) <= u64::from(height);
        if fits {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x: self.x,
                y: self.y,
                size: self.size,
                width,
                height,
            })
        }
    }
}

/// How a manifest entry was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Direct,
    MaskHue,
    NeighborSuggested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub tile: TileSpec,
    pub label: Option<String>,
    pub provenance: Provenance,
}

/// Ordered tile records without duplicate footprints.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TileManifest {
    entries: Vec<ManifestEntry>,
    seen: HashSet<TileSpec>,
}

impl TileManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ManifestEntry>) -> Result<Self> {
        let mut m = Self::new();
        for e in entries {
            m.push(e)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, entry: ManifestEntry) -> Result<()> {
        if !self.seen.insert(entry.tile.clone()) {
            let t = &entry.tile;
            return Err(Error::invalid(format!(
                "duplicate manifest tile {} at ({}, {}) size {}",
                t.image_id, t.x, t.y, t.size
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Appends entries from `other`, skipping footprints already present.
    pub fn merge(&mut self, other: &TileManifest) {
        for e in &other.entries {
            if self.seen.insert(e.tile.clone()) {
                self.entries.push(e.clone());
            }
        }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_of(&self, tile: &TileSpec) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| &e.tile == tile)
            .and_then(|e| e.label.as_deref())
    }

    pub fn count_label(&self, label: &str) -> usize {
        self.entries.iter().filter(|e| e.label.as_deref() == Some(label)).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut m = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            m.push(entry)?;
        }
        Ok(m)
    }
}

/// Parameters for mask-driven tile harvesting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub size: u32,
    /// Minimum fraction of tile pixels covered by the refined mask.
    pub sth: f64,
    pub shifts: u32,
    pub class_name: String,
}

impl SelectionParams {
    pub fn new(class_name: impl Into<String>, size: u32, sth: f64) -> Self {
        Self {
            size,
            sth,
            shifts: DEFAULT_SHIFTS,
            class_name: class_name.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sth > 0.0 && self.sth <= 1.0) {
            return Err(Error::invalid(format!("sth must lie in (0, 1], got {}", self.sth)));
        }
        if self.shifts == 0 {
            return Err(Error::invalid("shifts must be at least 1"));
        }
        if self.size == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        Ok(())
    }
}

/// Top-left corners of the union of `shifts` non-overlapping grids, grid `k`
/// offset diagonally by [`shift_offset`]. Ordered by grid, then row-major; a
/// corner repeated by a later grid is kept only once.
/// Diagonal offset of grid `k`: `floor(r_k * size)` where `r_k` is the
/// base-2 van der Corput sequence 0, 1/2, 1/4, 3/4, 1/8, ... The offsets for
/// `n` shifts are a prefix of those for `n + 1`, so adding a shift never
/// removes a candidate tile. For 1, 2 and 4 shifts this equals the evenly
/// spaced `floor(k * size / shifts)`.
pub fn shift_offset(k: u32, size: u32) -> u32 {
    let bits = 32 - k.leading_zeros();
    if bits == 0 {
        return 0;
    }
    let reversed = u64::from(k.reverse_bits() >> (32 - bits));
    ((reversed * u64::from(size)) >> bits) as u32
}

pub fn grid_positions(width: u32, height: u32, size: u32, shifts: u32) -> Result<Vec<(u32, u32)>> {
    if size == 0 || size > width.min(height) {
        return Err(Error::invalid(format!(
            "tile size {size} does not fit a {width}x{height} image"
        )));
    }
    if shifts == 0 {
        return Err(Error::invalid("shifts must be at least 1"));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for k in 0..shifts {
        let offset = shift_offset(k, size);
        let mut y = offset;
        while y + size <= height {
            let mut x = offset;
            while x + size <= width {
                if seen.insert((x, y)) {
                    out.push((x, y));
                }
                x += size;
            }
            y += size;
        }
    }
    Ok(out)
}

pub fn grid_tiles(image_id: &str, width: u32, height: u32, size: u32, shifts: u32) -> Result<Vec<TileSpec>> {
    Ok(grid_positions(width, height, size, shifts)?
        .into_iter()
        .map(|(x, y)| TileSpec::new(image_id, x, y, size))
        .collect())
}

/// Fraction of the tile footprint covered by set mask bits.
pub fn overlay_fraction(tile: &TileSpec, mask: &CoverMask) -> Result<f64> {
    tile.check_bounds(mask.width(), mask.height())?;
    let mut set = 0u64;
    for y in tile.y..tile.y + tile.size {
        for x in tile.x..tile.x + tile.size {
            set += u64::from(mask.get(x, y));
        }
    }
    Ok(set as f64 / (f64::from(tile.size) * f64::from(tile.size)))
}

/// Summed-area table over a mask for constant-time window counts.
pub struct MaskIntegral {
    width: u32,
    height: u32,
    sums: Vec<u64>,
}

impl MaskIntegral {
    pub fn new(mask: &CoverMask) -> Self {
        let (w, h) = (mask.width() as usize, mask.height() as usize);
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += u64::from(mask.bits()[y * w + x]);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: mask.width(),
            height: mask.height(),
            sums,
        }
    }

    pub fn count(&self, x: u32, y: u32, size: u32) -> u64 {
        let stride = self.width as usize + 1;
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + size as usize, y0 + size as usize);
        self.sums[y1 * stride + x1] + self.sums[y0 * stride + x0]
            - self.sums[y0 * stride + x1]
            - self.sums[y1 * stride + x0]
    }

    pub fn fraction(&self, tile: &TileSpec) -> Result<f64> {
        tile.check_bounds(self.width, self.height)?;
        let area = f64::from(tile.size) * f64::from(tile.size);
        Ok(self.count(tile.x, tile.y, tile.size) as f64 / area)
    }
}

/// Every shifted-grid tile whose refined-mask overlay reaches `params.sth`,
/// labelled with the class and provenance `mask-hue`.
pub fn select_training_tiles(image_id: &str, refined: &CoverMask, params: &SelectionParams) -> Result<TileManifest> {
    params.validate()?;
    let integral = MaskIntegral::new(refined);
    let positions = grid_positions(refined.width(), refined.height(), params.size, params.shifts)?;
    let area = u64::from(params.size) * u64::from(params.size);
    // integer comparison avoids rounding at sth = 1.0
    let selected: Vec<(u32, u32)> = positions
        .into_par_iter()
        .filter(|&(x, y)| {
            let c = integral.count(x, y, params.size);
            c as f64 >= params.sth * area as f64 || c == area
        })
        .collect();
    TileManifest::from_entries(selected.into_iter().map(|(x, y)| ManifestEntry {
        tile: TileSpec::new(image_id, x, y, params.size),
        label: Some(params.class_name.clone()),
        provenance: Provenance::MaskHue,
    }))
}

/// Copies the tile footprint out of the image.
pub fn crop_tile(img: &RgbImage, tile: &TileSpec) -> Result<RgbImage> {
    tile.check_bounds(img.width(), img.height())?;
    let w = img.width() as usize;
    let s = tile.size as usize;
    let mut pixels = Vec::with_capacity(s * s);
    for y in tile.y as usize..tile.y as usize + s {
        let row = y * w + tile.x as usize;
        pixels.extend_from_slice(&img.pixels()[row..row + s]);
    }
    RgbImage::new(tile.size, tile.size, pixels)
}
