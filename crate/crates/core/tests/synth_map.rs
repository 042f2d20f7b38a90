mod common;

use common::matrix;
use vegmap_core::features::{embed_baseline, BaselineEmbedder, TileEmbedder};
use vegmap_core::imaging::{HueRangeSet, RgbImage};
use vegmap_core::learners::{fit, LabeledDataset, LearnerConfig, LearnerKind};
use vegmap_core::mapper::{class_area_stats, predict_map, render_overlay, default_palette, PredictionMap};
use vegmap_core::synthfield::{generate_scene, majority_label, ClassSpec, GroundTruth, SceneSpec};
use vegmap_core::tiling::{crop_tile, TileSpec};
use vegmap_core::Result;

/// Feature is the tile position, so maps over huge frames stay cheap.
struct Position;

impl TileEmbedder for Position {
    fn layout_id(&self) -> &str {
        "position"
    }

    fn dim(&self) -> usize {
        2
    }

    fn embed(&self, tile: &TileSpec, _pixels: &RgbImage) -> Result<Vec<f64>> {
        Ok(vec![f64::from(tile.x), f64::from(tile.y)])
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

fn plain(name: &str, hues: [u16; 2], patch_count: usize) -> ClassSpec {
    ClassSpec {
        name: name.into(),
        hues: HueRangeSet::new(vec![hues]).unwrap(),
        hue_weights: vec![],
        sat_mean: 0.6,
        sat_spread: 0.1,
        val_mean: 0.6,
        val_spread: 0.1,
        patch_count,
        speckle: 0.0,
        clusters: 0,
    }
}

fn two_class(w: u32, h: u32, patches: usize, r: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        width: w,
        height: h,
        classes: vec![plain("ground", [30, 40], 0), plain("leaf", [100, 110], patches)],
        background: "ground".into(),
        patch_radius_mean: r,
        patch_radius_spread: 0.0,
        cluster_spread: 0.0,
        shadow_fraction: 0.0,
        noise_sigma: 0.0,
        blur_radius: 0,
        seed,
    }
}

/// Expected covered share for `n` uniform disk centers: a pixel is missed by
/// one disk with probability 1 - a/A, where `a` is the part of the disk
/// around the pixel that falls inside the frame.
fn boolean_model_fraction(w: u32, h: u32, r: f64, n: usize) -> f64 {
    let area = f64::from(w) * f64::from(h);
    let step = 4;
    let ri = r.ceil() as i64;
    let (mut sum, mut count) = (0.0, 0.0);
    for py in (0..h).step_by(step) {
        for px in (0..w).step_by(step) {
            let mut a = 0.0;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (x, y) = (i64::from(px) + dx, i64::from(py) + dy);
                    if x >= 0 && y >= 0 && x < i64::from(w) && y < i64::from(h) && ((dx * dx + dy * dy) as f64) <= r * r {
                        a += 1.0;
                    }
                }
            }
            sum += 1.0 - (1.0 - a / area).powi(n as i32);
            count += 1.0;
        }
    }
    sum / count
}

#[test]
fn patch_coverage_follows_the_boolean_model() {
    let (w, h, r) = (320, 240, 9.0);
    for n in [50, 150, 400] {
        let expected = boolean_model_fraction(w, h, r, n);
        let mean: f64 = (0..4)
            .map(|seed| generate_scene(&two_class(w, h, n, r, seed)).unwrap().1.fractions()[1])
            .sum::<f64>()
            / 4.0;
        assert!((mean - expected).abs() < 0.05, "n={n}: {mean} vs {expected}");
    }
}

#[test]
fn majority_label_matches_histogram() {
    let (_, gt) = generate_scene(&SceneSpec::field(256, 192, 4)).unwrap();
    for (x, y, s) in [(0, 0, 64), (64, 32, 64), (128, 128, 32), (0, 64, 128)] {
        let tile = TileSpec::new("f", x, y, s);
        let mut counts = vec![0; gt.class_list.len()];
        for yy in y..y + s {
            for xx in x..x + s {
                counts[gt.labels[(yy * gt.width + xx) as usize] as usize] += 1;
            }
        }
        let max = *counts.iter().max().unwrap();
        let first = counts.iter().position(|&c| c == max).unwrap();
        assert_eq!(majority_label(&gt, &tile).unwrap(), first);
    }
    assert!(majority_label(&gt, &TileSpec::new("f", 200, 0, 64)).is_err());
}

#[test]
fn ground_truth_png_round_trips() {
    let (_, gt) = generate_scene(&SceneSpec::field(96, 64, 2)).unwrap();
    let back = GroundTruth::decode_png(&gt.encode_png().unwrap(), gt.class_list.clone()).unwrap();
    assert_eq!(back, gt);
}

#[test]
fn map_cells_match_direct_prediction() {
    let (img, _) = generate_scene(&SceneSpec::field(256, 192, 9)).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, (x, y)) in [(0, 0), (64, 0), (128, 64), (192, 128), (0, 128), (64, 64)].into_iter().enumerate() {
        let t = TileSpec::new("s", x, y, 64);
        rows.push(embed_baseline(&crop_tile(&img, &t).unwrap()).unwrap().values);
        labels.push(i % 2);
    }
    let mut data = matrix("x", &rows);
    data = data.with_layout(BaselineEmbedder.layout_id());
    let data = LabeledDataset::new(data, labels, vec!["a".into(), "b".into()]).unwrap();
    let model = fit(&LearnerConfig::new(LearnerKind::Knn, 0), &data).unwrap();
    let map = predict_map(&model, &BaselineEmbedder, "s", &img, 64).unwrap();
    assert_eq!((map.rows, map.cols), (3, 4));
    map.validate().unwrap();
    for (r, c) in [(0, 0), (1, 2), (2, 3)] {
        let t = map.tile(r, c);
        let direct = model.proba_values(&embed_baseline(&crop_tile(&img, &t).unwrap()).unwrap().values).unwrap();
        assert_eq!(map.cell(r, c).probs, direct);
    }
    let back = PredictionMap::from_json(&map.to_json().unwrap()).unwrap();
    assert_eq!(back, map);
    let overlay = render_overlay(&map, &img, &map.class_list, &default_palette(2), 0.5).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (256, 192));
}

#[test]
fn uhd_frame_gives_512_cells_and_consistent_areas() {
    let data = LabeledDataset::new(
        matrix("position", &[vec![0.0, 0.0], vec![4000.0, 2000.0], vec![0.0, 2000.0]]),
        vec![0, 1, 2],
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let cfg = LearnerConfig {
        params: vegmap_core::learners::LearnerParams::Knn(vegmap_core::learners::KnnParams { k: 1, standardize: false }),
        seed: 0,
    };
    let model = fit(&cfg, &data).unwrap();
    let img = RgbImage::from_fn(4096, 2160, |_, _| [0, 0, 0]).unwrap();
    let map = predict_map(&model, &Position, "uhd", &img, 128).unwrap();
    assert_eq!((map.rows, map.cols, map.cells.len()), (16, 32, 512));
    let stats = class_area_stats(&map);
    let mut tally = [0usize; 3];
    for c in &map.cells {
        tally[c.class_index] += 1;
    }
    for (s, t) in stats.iter().zip(tally) {
        assert_eq!(s.cells, t);
        assert!((s.fraction - t as f64 / 512.0).abs() < 1e-12);
    }
    assert!(predict_map(&model, &BaselineEmbedder, "uhd", &img, 128).is_err());
}
