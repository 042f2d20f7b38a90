//! Whole-image classification on a non-overlapping tile grid, overlay
//! rendering and per-class area statistics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TileEmbedder;
use crate::imaging::RgbImage;
use crate::learners::{argmax, Model};
use crate::tiling::{crop_tile, grid_tiles, TileSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub class_index: usize,
    pub probs: Vec<f64>,
}

/// Row-major grid of per-tile predictions over one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMap {
    pub image_id: String,
    pub size: u32,
    pub rows: u32,
    pub cols: u32,
    pub class_list: Vec<String>,
    pub cells: Vec<MapCell>,
}

impl PredictionMap {
    pub fn cell(&self, row: u32, col: u32) -> &MapCell {
        &self.cells[(row * self.cols + col) as usize]
    }

    pub fn tile(&self, row: u32, col: u32) -> TileSpec {
        TileSpec::new(self.image_id.clone(), col * self.size, row * self.size, self.size)
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.class_list
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::invalid(format!("unknown class `{class}`")))
    }

    /// Checks shape and that every cell holds a distribution whose argmax is
    /// its class.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != (self.rows * self.cols) as usize {
            return Err(Error::DimensionMismatch {
                expected: format!("{} cells", self.rows * self.cols),
                actual: format!("{} cells", self.cells.len()),
            });
        }
        for (i, c) in self.cells.iter().enumerate() {
            let sum: f64 = c.probs.iter().sum();
            if c.probs.len() != self.class_list.len()
                || c.probs.iter().any(|p| !(*p >= 0.0))
                || (sum - 1.0).abs() > 1e-9
                || c.class_index != argmax(&c.probs)
            {
                return Err(Error::invalid(format!("cell {i} does not hold a valid prediction")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: Self = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }
}

/// Classifies every cell of the `size`-pixel grid anchored at the origin.
pub fn predict_map(
    model: &Model,
    embedder: &dyn TileEmbedder,
    image_id: &str,
    img: &RgbImage,
    size: u32,
) -> Result<PredictionMap> {
    if embedder.layout_id() != model.layout_id {
        return Err(Error::LayoutMismatch {
            expected: model.layout_id.clone(),
            actual: embedder.layout_id().to_string(),
        });
    }
    let tiles = grid_tiles(image_id, img.width(), img.height(), size, 1)?;
    let cells = tiles
        .par_iter()
        .map(|t| {
            let values = if embedder.needs_pixels() {
                embedder.embed(t, &crop_tile(img, t)?)?
            } else {
                embedder.embed(t, img)?
            };
            let probs = model.proba_values(&values)?;
            Ok(MapCell {
                class_index: argmax(&probs),
                probs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionMap {
        image_id: image_id.to_string(),
        size,
        rows: img.height() / size,
        cols: img.width() / size,
        class_list: model.class_list.clone(),
        cells,
    })
}

/// Distinct colors assigned by class-list position.
pub fn default_palette(n: usize) -> Vec<[u8; 3]> {
    const BASE: [[u8; 3]; 8] = [
        [166, 118, 29],
        [27, 158, 119],
        [117, 112, 179],
        [230, 171, 2],
        [231, 41, 138],
        [102, 166, 30],
        [217, 95, 2],
        [102, 102, 102],
    ];
    (0..n).map(|i| BASE[i % BASE.len()]).collect()
}

/// Tints the cells predicted as one of `classes`. Pixels outside those cells
/// are copied unchanged.
pub fn render_overlay(
    map: &PredictionMap,
    img: &RgbImage,
    classes: &[String],
    palette: &[[u8; 3]],
    alpha: f64,
) -> Result<RgbImage> {
    if img.width() / map.size != map.cols || img.height() / map.size != map.rows {
        return Err(Error::invalid(format!(
            "a {}x{} map of {} px cells does not fit a {}x{} image",
            map.cols,
            map.rows,
            map.size,
            img.width(),
            img.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if palette.len() < map.class_list.len() {
        return Err(Error::invalid(format!(
            "palette has {} colors for {} classes",
            palette.len(),
            map.class_list.len()
        )));
    }
    let mut selected = vec![false; map.class_list.len()];
    for c in classes {
        selected[map.class_index(c)?] = true;
    }
    let mut out = img.clone();
    let blend = |p: u8, c: u8| ((1.0 - alpha) * f64::from(p) + alpha * f64::from(c)).round() as u8;
    for row in 0..map.rows {
        for col in 0..map.cols {
            let k = map.cell(row, col).class_index;
            if !selected[k] {
                continue;
            }
            let tint = palette[k];
            for y in row * map.size..(row + 1) * map.size {
                for x in col * map.size..(col + 1) * map.size {
                    let p = out.get(x, y);
                    out.set(x, y, [blend(p[0], tint[0]), blend(p[1], tint[1]), blend(p[2], tint[2])]);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassArea {
    pub class: String,
    pub cells: usize,
    pub fraction: f64,
}

/// Cell count and share per class, in class-list order.
pub fn class_area_stats(map: &PredictionMap) -> Vec<ClassArea> {
    let mut counts = vec![0usize; map.class_list.len()];
    for c in &map.cells {
        counts[c.class_index] += 1;
    }
    let total = map.cells.len();
    map.class_list
        .iter()
        .zip(counts)
        .map(|(name, cells)| ClassArea {
            class: name.clone(),
            cells,
            fraction: if total == 0 { 0.0 } else { cells as f64 / total as f64 },
        })
        .collect()
}

pub fn write_area_csv<W: Write>(stats: &[ClassArea], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class", "cells", "fraction"])?;
    for s in stats {
        out.write_record([s.class.clone(), s.cells.to_string(), format!("{:.6}", s.fraction)])?;
    }
    out.flush()?;
    Ok(())
}
