//! Operations shared by the CLI and the HTTP service. Both front ends call
//! these and serialize the results the same way, so equal parameters give
//! byte-identical artifacts.

use std::collections::HashMap;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vegmap_core::features::{embed_tiles, BaselineEmbedder, FeatureMatrix, PrecomputedEmbedder, BASELINE_LAYOUT};
use vegmap_core::imaging::{
    compute_hue_spectrum, derive_hue_ranges, refine_mask, CoverMask, HueRangeSet, RefineOptions, RgbImage,
};
use vegmap_core::learners::{cross_validate, CvReport, LabeledDataset, LearnerConfig, Model};
use vegmap_core::mapper::{class_area_stats, predict_map, render_overlay, write_area_csv, PredictionMap};
use vegmap_core::synthfield::GroundTruth;
use vegmap_core::tiling::{select_training_tiles, SelectionParams, TileManifest, TileSpec};

/// Content address: the first 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectArgs {
    pub image_id: String,
    pub class: String,
    /// Explicit hue filter; derived from the masked spectrum when absent.
    pub hue: Option<HueRangeSet>,
    pub hue_mass: f64,
    pub max_intervals: usize,
    pub sat_min: f64,
    pub keep_achromatic: bool,
    pub size: u32,
    pub sth: f64,
    pub shifts: u32,
}

pub struct Selection {
    pub ranges: HueRangeSet,
    pub refined: CoverMask,
    pub manifest: TileManifest,
}

/// Hue-filters the painted mask and harvests the tiles it covers.
pub fn select(img: &RgbImage, mask: &CoverMask, args: &SelectArgs) -> Result<Selection> {
    let ranges = match &args.hue {
        Some(r) => r.clone(),
        None => {
            let spectrum = compute_hue_spectrum(img, mask, args.sat_min)?;
            derive_hue_ranges(&spectrum, args.hue_mass, args.max_intervals)
                .with_context(|| format!("deriving hue ranges for `{}`", args.class))?
        }
    };
    let opts = RefineOptions {
        sat_min: args.sat_min,
        keep_achromatic: args.keep_achromatic,
    };
    let refined = refine_mask(mask, img, &ranges, opts)?;
    let params = SelectionParams {
        size: args.size,
        sth: args.sth,
        shifts: args.shifts,
        class_name: args.class.clone(),
    };
    let manifest = select_training_tiles(&args.image_id, &refined, &params)?;
    Ok(Selection {
        ranges,
        refined,
        manifest,
    })
}

/// Concatenates manifests; a footprint keeps the label it was first given.
pub fn merge_manifests<'a>(parts: impl IntoIterator<Item = &'a TileManifest>) -> TileManifest {
    let mut out = TileManifest::new();
    for p in parts {
        out.merge(p);
    }
    out
}

pub fn manifest_tiles(manifest: &TileManifest) -> Vec<TileSpec> {
    manifest.entries().iter().map(|e| e.tile.clone()).collect()
}

/// Baseline features for every manifest tile, in manifest order.
pub fn embed(images: &HashMap<String, RgbImage>, manifest: &TileManifest) -> Result<FeatureMatrix> {
    Ok(embed_tiles(&BaselineEmbedder, images, &manifest_tiles(manifest))?)
}

/// Rows of `features` that carry a manifest label.
pub fn dataset(features: &FeatureMatrix, manifest: &TileManifest, classes: Option<&[String]>) -> Result<LabeledDataset> {
    let data = LabeledDataset::from_manifest(features, manifest, classes)?;
    if data.is_empty() {
        bail!("no feature rows match a labelled manifest entry");
    }
    Ok(data)
}

pub fn cv(cfgs: &[LearnerConfig], data: &LabeledDataset, folds: usize, seed: u64, name: Option<&str>) -> Result<CvReport> {
    let mut report = cross_validate(cfgs, data, folds, seed)?;
    if let Some(n) = name {
        report.dataset = n.to_string();
    }
    Ok(report)
}

/// Clears wall-clock columns so reruns serialize identically.
pub fn strip_timing(report: &mut CvReport) {
    for r in &mut report.rows {
        r.train_time = 0.0;
        r.test_time = 0.0;
    }
}

/// Whole-image map. Models trained on imported embeddings need those
/// embeddings for every grid cell.
pub fn predict(
    model: &Model,
    img: &RgbImage,
    image_id: &str,
    size: u32,
    features: Option<FeatureMatrix>,
) -> Result<PredictionMap> {
    Ok(match features {
        Some(f) => predict_map(model, &PrecomputedEmbedder::new(f), image_id, img, size)?,
        None if model.layout_id == BASELINE_LAYOUT => predict_map(model, &BaselineEmbedder, image_id, img, size)?,
        None => bail!(
            "model uses feature layout `{}`; pass the matching embeddings",
            model.layout_id
        ),
    })
}

pub fn area_csv(map: &PredictionMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_area_csv(&class_area_stats(map), &mut out)?;
    Ok(out)
}

/// Overlay PNG; an empty `classes` list tints every class.
pub fn overlay_png(map: &PredictionMap, img: &RgbImage, classes: &[String], palette: &[[u8; 3]], alpha: f64) -> Result<Vec<u8>> {
    let classes = if classes.is_empty() { map.class_list.clone() } else { classes.to_vec() };
    Ok(render_overlay(map, img, &classes, palette, alpha)?.encode_png()?)
}

/// Palette for `classes`: configured colors where known, defaults otherwise.
pub fn palette_for(classes: &[String], known: &[(String, [u8; 3])]) -> Vec<[u8; 3]> {
    let fallback = vegmap_core::mapper::default_palette(classes.len());
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| known.iter().find(|(n, _)| n == c).map_or(fallback[i], |(_, rgb)| *rgb))
        .collect()
}

/// Per-class binary masks of a ground-truth raster, as single-channel PNGs.
pub fn truth_masks(gt: &GroundTruth) -> Result<Vec<(String, Vec<u8>)>> {
    gt.class_list
        .iter()
        .enumerate()
        .map(|(i, name)| Ok((name.clone(), gt.class_mask(i)?.encode_png()?)))
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
