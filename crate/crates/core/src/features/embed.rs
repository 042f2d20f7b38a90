//! Handcrafted 67-dimensional colour/texture tile descriptor.
//!
//! Layout (indices inclusive):
//!
//! | range    | content                                                        |
//! |----------|----------------------------------------------------------------|
//! | 0..=35   | hue histogram, 10 degree bins, chromatic pixels only            |
//! | 36..=43  | saturation histogram, 8 bins over all pixels                    |
//! | 44..=51  | value histogram, 8 bins over all pixels                         |
//! | 52, 53   | hue circular mean and circular standard deviation, in turns     |
//! | 54, 55   | saturation mean and standard deviation                          |
//! | 56, 57   | value mean and standard deviation                               |
//! | 58..=61  | GLCM contrast, correlation, energy, homogeneity at offset (1,0) |
//! | 62..=65  | the same four at offset (0,1)                                   |
//! | 66       | edge density                                                    |
//!
//! Chromatic pixels have a defined hue and saturation of at least
//! [`DEFAULT_SAT_MIN`]. The GLCM is symmetric, built on the value channel
//! quantized to 16 levels, and normalized to sum to one; energy is the
//! angular second moment. Edge density is the fraction of pixels whose
//! central-difference value gradient has magnitude above 0.1.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rayon::prelude::*;

use super::{FeatureMatrix, FeatureVector};
use crate::error::{Error, Result};
use crate::imaging::{rgb_to_hsv, RgbImage, DEFAULT_SAT_MIN};
use crate::tiling::{crop_tile, TileSpec};

pub const BASELINE_DIM: usize = 67;
pub const BASELINE_LAYOUT: &str = "baseline67/v1";

const HUE_BINS: usize = 36;
const SV_BINS: usize = 8;
const GLCM_LEVELS: usize = 16;
const EDGE_THRESHOLD: f64 = 0.1;
const MIN_TILE: u32 = 16;

/// Maps a tile to a fixed-length feature vector.
pub trait TileEmbedder: Sync {
    fn layout_id(&self) -> &str;

    fn dim(&self) -> usize;

    /// `pixels` is the crop of `tile`.
    fn embed(&self, tile: &TileSpec, pixels: &RgbImage) -> Result<Vec<f64>>;

    /// False when the embedder never reads pixels and cropping can be skipped.
    fn needs_pixels(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineEmbedder;

impl TileEmbedder for BaselineEmbedder {
    fn layout_id(&self) -> &str {
        BASELINE_LAYOUT
    }

    fn dim(&self) -> usize {
        BASELINE_DIM
    }

    fn embed(&self, _tile: &TileSpec, pixels: &RgbImage) -> Result<Vec<f64>> {
        baseline_values(pixels)
    }
}

/// Serves rows of an already computed matrix, looked up by tile key.
pub struct PrecomputedEmbedder {
    matrix: FeatureMatrix,
    index: HashMap<TileSpec, usize>,
}

impl PrecomputedEmbedder {
    pub fn new(matrix: FeatureMatrix) -> Self {
        let index = matrix.keys().iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        Self { matrix, index }
    }
}

impl TileEmbedder for PrecomputedEmbedder {
    fn layout_id(&self) -> &str {
        self.matrix.layout_id()
    }

    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn embed(&self, tile: &TileSpec, _pixels: &RgbImage) -> Result<Vec<f64>> {
        self.index
            .get(tile)
            .map(|&i| self.matrix.row(i).to_vec())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no precomputed features for tile {} ({}, {}, {})",
                    tile.image_id, tile.x, tile.y, tile.size
                ))
            })
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Baseline descriptor of a square tile at least 16 px wide.
pub fn embed_baseline(tile: &RgbImage) -> Result<FeatureVector> {
    Ok(FeatureVector {
        values: baseline_values(tile)?,
        layout_id: BASELINE_LAYOUT.to_string(),
    })
}

/// Embeds every tile, cropping from `images` by `image_id`. Row order follows
/// `tiles`.
pub fn embed_tiles(
    embedder: &dyn TileEmbedder,
    images: &HashMap<String, RgbImage>,
    tiles: &[TileSpec],
) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = tiles
        .par_iter()
        .map(|t| {
            let img = images
                .get(&t.image_id)
                .ok_or_else(|| Error::invalid(format!("unknown image id `{}`", t.image_id)))?;
            if embedder.needs_pixels() {
                embedder.embed(t, &crop_tile(img, t)?)
            } else {
                t.check_bounds(img.width(), img.height())?;
                embedder.embed(t, img)
            }
        })
        .collect::<Result<_>>()?;
    let mut m = FeatureMatrix::new(embedder.layout_id(), embedder.dim());
    for (t, r) in tiles.iter().zip(rows) {
        m.push(t.clone(), r)?;
    }
    Ok(m)
}

fn baseline_values(tile: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = tile.dims();
    if w != h {
        return Err(Error::invalid(format!("baseline embedder needs a square tile, got {w}x{h}")));
    }
    if w < MIN_TILE {
        return Err(Error::invalid(format!("tile side {w} is below the {MIN_TILE} px minimum")));
    }
    let n = tile.pixels().len();
    let nf = n as f64;
    let hsv: Vec<_> = tile.pixels().iter().map(|&p| rgb_to_hsv(p)).collect();

    let mut out = Vec::with_capacity(BASELINE_DIM);

    let mut hue_hist = [0.0f64; HUE_BINS];
    let mut s_hist = [0.0f64; SV_BINS];
    let mut v_hist = [0.0f64; SV_BINS];
    let (mut cos_sum, mut sin_sum, mut chromatic) = (0.0, 0.0, 0usize);
    for p in &hsv {
        if p.hue_defined && p.s >= DEFAULT_SAT_MIN {
            hue_hist[((p.h / 10.0) as usize).min(HUE_BINS - 1)] += 1.0;
            let a = p.h.to_radians();
            cos_sum += a.cos();
            sin_sum += a.sin();
            chromatic += 1;
        }
        s_hist[((p.s * SV_BINS as f64) as usize).min(SV_BINS - 1)] += 1.0;
        v_hist[((p.v * SV_BINS as f64) as usize).min(SV_BINS - 1)] += 1.0;
    }
    if chromatic > 0 {
        out.extend(hue_hist.iter().map(|c| c / chromatic as f64));
    } else {
        out.extend(hue_hist);
    }
    out.extend(s_hist.iter().map(|c| c / nf));
    out.extend(v_hist.iter().map(|c| c / nf));

    if chromatic > 0 {
        let mean_angle = sin_sum.atan2(cos_sum).rem_euclid(TAU);
        let r = ((cos_sum * cos_sum + sin_sum * sin_sum).sqrt() / chromatic as f64).clamp(1e-12, 1.0);
        out.push(mean_angle / TAU);
        out.push((-2.0 * r.ln()).max(0.0).sqrt() / TAU);
    } else {
        out.extend([0.0, 0.0]);
    }
    let (sm, ss) = mean_std(hsv.iter().map(|p| p.s), nf);
    let (vm, vs) = mean_std(hsv.iter().map(|p| p.v), nf);
    out.extend([sm, ss, vm, vs]);

    let levels: Vec<usize> = hsv
        .iter()
        .map(|p| ((p.v * GLCM_LEVELS as f64) as usize).min(GLCM_LEVELS - 1))
        .collect();
    let (w, h) = (w as usize, h as usize);
    for (dx, dy) in [(1usize, 0usize), (0, 1)] {
        let g = Glcm::build(&levels, w, h, dx, dy);
        out.extend(g.features());
    }

    let values: Vec<f64> = hsv.iter().map(|p| p.v).collect();
    let mut edges = 0usize;
    for y in 0..h {
        for x in 0..w {
            let at = |xx: usize, yy: usize| values[yy * w + xx];
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            if (gx * gx + gy * gy).sqrt() > EDGE_THRESHOLD {
                edges += 1;
            }
        }
    }
    out.push(edges as f64 / nf);

    debug_assert_eq!(out.len(), BASELINE_DIM);
    Ok(out)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Normalized symmetric co-occurrence matrix.
pub(crate) struct Glcm {
    p: [[f64; GLCM_LEVELS]; GLCM_LEVELS],
}

impl Glcm {
    pub(crate) fn build(levels: &[usize], w: usize, h: usize, dx: usize, dy: usize) -> Self {
        let mut p = [[0.0f64; GLCM_LEVELS]; GLCM_LEVELS];
        let mut total = 0.0;
        for y in 0..h.saturating_sub(dy) {
            for x in 0..w.saturating_sub(dx) {
                let a = levels[y * w + x];
                let b = levels[(y + dy) * w + x + dx];
                p[a][b] += 1.0;
                p[b][a] += 1.0;
                total += 2.0;
            }
        }
        if total > 0.0 {
            for row in &mut p {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
        }
        Self { p }
    }

    /// `[contrast, correlation, energy, homogeneity]`; correlation is 0 when
    /// the quantized values do not vary.
    pub(crate) fn features(&self) -> [f64; 4] {
        let mut mean = 0.0;
        for (i, row) in self.p.iter().enumerate() {
            mean += i as f64 * row.iter().sum::<f64>();
        }
        let (mut contrast, mut energy, mut homogeneity, mut var, mut cov) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, row) in self.p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let d = i as f64 - j as f64;
                contrast += v * d * d;
                energy += v * v;
                homogeneity += v / (1.0 + d * d);
                var += v * (i as f64 - mean) * (i as f64 - mean);
                cov += v * (i as f64 - mean) * (j as f64 - mean);
            }
        }
        let correlation = if var > 1e-12 { cov / var } else { 0.0 };
        [contrast, correlation, energy, homogeneity]
    }
}
