//! Acceptance suite: one PASS/FAIL line per primary criterion. Exits non-zero
//! when any criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vegmap::ops::{self, SelectArgs};
use vegmap_core::features::{BaselineEmbedder, FeatureMatrix};
use vegmap_core::imaging::{hsv_to_rgb, rgb_to_hsv, RgbImage};
use vegmap_core::learners::{
    auc, ca, confusion, cross_validate, f1, fit, focus_coverage, log_loss, loo_validate, precision, recall,
    specificity, KnnParams, LabeledDataset, LearnerConfig, LearnerKind, LearnerParams, MlpModel,
};
use vegmap_core::mapper::predict_map;
use vegmap_core::synthfield::{generate_scene, majority_label, GroundTruth, SceneSpec};
use vegmap_core::tiling::{select_training_tiles, SelectionParams, TileManifest, TileSpec};

const WIDTH: u32 = 4096;
const HEIGHT: u32 = 2160;
const SCENE_A: u64 = 1;
const SCENE_B: u64 = 2;
const LEVELS: [(u32, [f64; 3]); 3] = [(64, [0.98, 0.99, 0.999]), (128, [0.8, 0.9, 0.95]), (256, [0.5, 0.6, 0.7])];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Scene {
    id: String,
    img: RgbImage,
    gt: GroundTruth,
}

fn scene(seed: u64) -> Scene {
    let (img, gt) = generate_scene(&SceneSpec::field(WIDTH, HEIGHT, seed)).expect("scene renders");
    Scene {
        id: format!("scene{seed}"),
        img,
        gt,
    }
}

/// Expert step on a synthetic scene: the painted mask is the class's ground
/// truth, the hue filter is derived from its spectrum, and tiles are
/// harvested at the given size and STH.
fn harvest(s: &Scene, size: u32, sth: f64, shifts: u32) -> Vec<(String, TileManifest)> {
    s.gt.class_list
        .iter()
        .enumerate()
        .map(|(ci, class)| {
            let args = SelectArgs {
                image_id: s.id.clone(),
                class: class.clone(),
                hue: None,
                hue_mass: 1.0,
                max_intervals: 2,
                sat_min: 0.05,
                keep_achromatic: ci == 0,
                size,
                sth,
                shifts,
            };
            let sel = ops::select(&s.img, &s.gt.class_mask(ci).unwrap(), &args).expect("selection runs");
            (class.clone(), sel.manifest)
        })
        .collect()
}

fn training_set(s: &Scene, size: u32, sth: f64) -> LabeledDataset {
    let parts = harvest(s, size, sth, 3);
    let manifest = ops::merge_manifests(parts.iter().map(|(_, m)| m));
    let images: HashMap<String, RgbImage> = [(s.id.clone(), s.img.clone())].into_iter().collect();
    let fm = ops::embed(&images, &manifest).expect("embedding runs");
    ops::dataset(&fm, &manifest, Some(&s.gt.class_list)).expect("dataset builds")
}

fn nine_dataset_cv(a: &Scene) -> Outcome {
    let start = Instant::now();
    let cfgs: Vec<LearnerConfig> = LearnerKind::ALL.iter().map(|&k| LearnerConfig::new(k, 0)).collect();
    let mut worst = (f64::INFINITY, String::new());
    let mut failures = Vec::new();
    for (size, sths) in LEVELS {
        for sth in sths {
            let data = training_set(a, size, sth);
            let report = cross_validate(&cfgs, &data, 3, 0).map_err(|e| format!("{size}px STH {sth}: {e}"))?;
            for row in &report.rows {
                let ca = row.metrics.ca;
                if let Some(e) = &row.error {
                    failures.push(format!("{size}px/{sth} {}: {e}", row.model));
                } else if !(ca >= 0.90) {
                    failures.push(format!("{size}px/{sth} {} CA {ca:.3}", row.model));
                }
                if ca < worst.0 {
                    worst = (ca, format!("{} at {size}px/{sth}, n={}", row.model, data.len()));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("runtime {secs:.0}s"));
    }
    check(
        failures.is_empty(),
        format!("9 datasets x 6 learners, min CA {:.3} ({}), {secs:.1}s {}", worst.0, worst.1, failures.join("; ")),
    )
}

fn tile_count_trends(a: &Scene) -> Outcome {
    let mut failures = Vec::new();
    let mut bv = Vec::new();
    // finer STH sweep than the nine datasets, plus shifts 1..=4 at each size
    for (size, sths) in LEVELS {
        let mut sweep: Vec<f64> = (1..=20).map(|i| f64::from(i) * 0.05).collect();
        sweep.extend(sths);
        sweep.sort_by(f64::total_cmp);
        for (ci, class) in a.gt.class_list.iter().enumerate() {
            let refined = harvest_mask(a, ci);
            let count = |sth: f64, shifts: u32| {
                let mut p = SelectionParams::new(class.clone(), size, sth);
                p.shifts = shifts;
                select_training_tiles(&a.id, &refined, &p).unwrap().len()
            };
            let by_sth: Vec<usize> = sweep.iter().map(|&s| count(s, 3)).collect();
            if by_sth.windows(2).any(|w| w[1] > w[0]) {
                failures.push(format!("{class} {size}px not monotone in STH: {by_sth:?}"));
            }
            let by_shift: Vec<usize> = (1..=4).map(|k| count(sths[1], k)).collect();
            if by_shift.windows(2).any(|w| w[1] < w[0]) {
                failures.push(format!("{class} {size}px not monotone in shifts: {by_shift:?}"));
            }
            if size == 64 && class == "beta_vulgaris" {
                bv = sths.iter().map(|&s| count(s, 3)).collect();
            }
        }
    }
    // sugar beet at 64 px should thin out as the threshold rises, as 398/379/257 in field data
    if !(bv[0] >= bv[1] && bv[1] >= bv[2] && bv[0] > bv[2]) {
        failures.push(format!("64px B. vulgaris counts {bv:?} do not fall like 398/379/257"));
    }
    check(failures.is_empty(), format!("64px B. vulgaris {bv:?} {}", failures.join("; ")))
}

fn harvest_mask(a: &Scene, ci: usize) -> vegmap_core::imaging::CoverMask {
    let args = SelectArgs {
        image_id: a.id.clone(),
        class: a.gt.class_list[ci].clone(),
        hue: None,
        hue_mass: 1.0,
        max_intervals: 2,
        sat_min: 0.05,
        keep_achromatic: ci == 0,
        size: 64,
        sth: 1.0,
        shifts: 1,
    };
    ops::select(&a.img, &a.gt.class_mask(ci).unwrap(), &args).unwrap().refined
}

fn map_validation(a: &Scene, b: &Scene) -> Outcome {
    let data = training_set(a, 128, 0.9);
    let mut lines = Vec::new();
    let mut nn = 0.0;
    for kind in LearnerKind::ALL {
        let model = fit(&LearnerConfig::new(kind, 0), &data).map_err(|e| e.to_string())?;
        let map = predict_map(&model, &BaselineEmbedder, &b.id, &b.img, 128).map_err(|e| e.to_string())?;
        let mut correct = 0;
        for r in 0..map.rows {
            for c in 0..map.cols {
                if map.cell(r, c).class_index == majority_label(&b.gt, &map.tile(r, c)).unwrap() {
                    correct += 1;
                }
            }
        }
        let acc = f64::from(correct) / map.cells.len() as f64;
        lines.push(format!("{}={acc:.3}", kind.short_name()));
        if kind == LearnerKind::NeuralNetwork {
            nn = acc;
        }
    }
    check(nn >= 0.90, format!("NN per-cell accuracy {nn:.3} on held-out scene ({})", lines.join(" ")))
}

fn pair_count_auc(probs: &[Vec<f64>], actual: &[usize], k: usize) -> f64 {
    let n = actual.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let pos: Vec<usize> = (0..actual.len()).filter(|&i| actual[i] == c).collect();
        let neg: Vec<usize> = (0..actual.len()).filter(|&i| actual[i] != c).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &i in &pos {
            for &j in &neg {
                wins += match probs[i][c].partial_cmp(&probs[j][c]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        total += pos.len() as f64 / n * wins / (pos.len() * neg.len()) as f64;
    }
    total
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(4..=50);
        let k = rng.random_range(2..=5);
        let mut actual: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        actual[0] = 0;
        actual[1] = 1;
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // coarse values force ties
                let raw: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(1..8u32))).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        worst = worst.max((auc(&probs, &actual, k) - pair_count_auc(&probs, &actual, k)).abs());
    }

    // six tiles, three classes; counts worked out by hand
    let actual = [0, 0, 0, 1, 1, 2];
    let predicted = [0, 0, 1, 1, 2, 2];
    let probs = vec![
        vec![0.8, 0.1, 0.1],
        vec![0.6, 0.3, 0.1],
        vec![0.4, 0.5, 0.1],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.3, 0.6],
        vec![0.05, 0.05, 0.9],
    ];
    let expected_ll = -(0.8f64.ln() + 0.6f64.ln() + 0.4f64.ln() + 0.7f64.ln() + 0.3f64.ln() + 0.9f64.ln()) / 6.0;
    let fixtures = [
        ("CA", ca(&actual, &predicted), 4.0 / 6.0),
        ("Precision", precision(&actual, &predicted, 3), 0.75),
        ("Recall", recall(&actual, &predicted, 3), 2.0 / 3.0),
        ("F1", f1(&actual, &predicted, 3), 61.0 / 90.0),
        ("Specificity", specificity(&actual, &predicted, 3), 53.0 / 60.0),
        ("LogLoss", log_loss(&probs, &actual), expected_ll),
        ("LogLoss clipped", log_loss(&[vec![0.0, 1.0]], &[0]), -(1e-15f64).ln()),
    ];
    let bad: Vec<String> = fixtures
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= 1e-12))
        .map(|(name, got, want)| format!("{name} {got} != {want}"))
        .collect();
    check(
        worst <= 1e-9 && bad.is_empty(),
        format!("200 AUC instances, max |diff| {worst:.1e}; {} fixtures {}", fixtures.len(), bad.join("; ")),
    )
}

fn confusion_contract() -> Outcome {
    let names: Vec<String> = ["Bv", "Ca", "Sa", "soil"].iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    for _ in 0..500 {
        let a = rng.random_range(0..4);
        actual.push(a);
        // soil is always recognised; the plant classes are confused
        predicted.push(if a == 3 { 3 } else { rng.random_range(0..3) });
    }
    let m = confusion(&actual, &predicted, &names).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for a in 0..4 {
        let col: f64 = (0..4).map(|p| m.percent[p][a]).sum();
        worst = worst.max((col - 100.0).abs());
    }
    let soil = m.percent[3][3];
    let soil_row_elsewhere: f64 = (0..3).map(|a| m.percent[3][a]).sum();
    check(
        worst <= 0.1 && soil == 100.0 && soil_row_elsewhere == 0.0,
        format!("column sums within {worst:.2e} of 100; perfect class column reads {soil:.1}"),
    )
}

fn hsv_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bad = 0;
    for _ in 0..100_000 {
        let rgb: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let p = rgb_to_hsv(rgb);
        if hsv_to_rgb(p.h, p.s, p.v) != rgb {
            bad += 1;
        }
    }
    let primaries = [
        ([255, 0, 0], 0.0),
        ([255, 255, 0], 60.0),
        ([0, 255, 0], 120.0),
        ([0, 255, 255], 180.0),
        ([0, 0, 255], 240.0),
        ([255, 0, 255], 300.0),
    ];
    let wrong: Vec<String> = primaries
        .iter()
        .filter(|(rgb, h)| rgb_to_hsv(*rgb).h != *h)
        .map(|(rgb, h)| format!("{rgb:?} -> {} not {h}", rgb_to_hsv(*rgb).h))
        .collect();
    check(
        bad == 0 && wrong.is_empty(),
        format!("{bad} of 100000 triples differ; primaries/secondaries exact {}", wrong.join("; ")),
    )
}

fn mlp_gradient() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let model = MlpModel::random(5, 7, 3, seed);
        let alpha = 1e-3;
        let (_, g) = model.loss_and_gradient(&x, &y, alpha);
        let analytic: Vec<f64> = [&g.w1, &g.b1, &g.w2, &g.b2].into_iter().flatten().copied().collect();
        let mut numeric = Vec::new();
        let h = 1e-6;
        for block in 0..4 {
            let len = [model.w1.len(), model.b1.len(), model.w2.len(), model.b2.len()][block];
            for i in 0..len {
                let shifted = |d: f64| {
                    let mut m = model.clone();
                    let params = match block {
                        0 => &mut m.w1,
                        1 => &mut m.b1,
                        2 => &mut m.w2,
                        _ => &mut m.b2,
                    };
                    params[i] += d;
                    m.loss_and_gradient(&x, &y, alpha).0
                };
                numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    check(worst < 1e-4, format!("5 seeded 5-7-3 networks, max relative error {worst:.2e}"))
}

fn separated(per_class: usize, k: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = FeatureMatrix::new("test", 2);
    let mut labels = Vec::new();
    for i in 0..per_class * k {
        let c = i % k;
        let angle = c as f64 * std::f64::consts::TAU / k as f64;
        let row = vec![10.0 * angle.cos() + rng.random_range(-1.0..1.0), 10.0 * angle.sin() + rng.random_range(-1.0..1.0)];
        m.push(TileSpec::new("t", i as u32, 0, 1), row).unwrap();
        labels.push(c);
    }
    LabeledDataset::new(m, labels, (0..k).map(|c| format!("c{c}")).collect()).unwrap()
}

fn loo_protocol() -> Outcome {
    let data = separated(35, 4, 3);
    let records = loo_validate(&LearnerConfig::new(LearnerKind::Knn, 0), &data, 0.10, 5).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = records.iter().map(|r| r.train_rows).collect();
    let mut rows: Vec<usize> = records.iter().map(|r| r.row).collect();
    rows.sort_unstable();
    rows.dedup();
    check(
        data.len() == 140 && records.len() == 14 && rows.len() == 14 && sizes.iter().all(|&s| s == 139),
        format!("N={} -> {} evaluations, training sizes {:?}", data.len(), records.len(), sizes.iter().collect::<std::collections::BTreeSet<_>>()),
    )
}

fn coverage_arithmetic() -> Outcome {
    let mut m = FeatureMatrix::new("test", 2);
    let anchors = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]];
    let train = |focus_at: usize| {
        let mut tm = FeatureMatrix::new("test", 2);
        for (i, a) in anchors.iter().enumerate() {
            tm.push(TileSpec::new("a", i as u32, 0, 1), a.clone()).unwrap();
        }
        let labels = (0..3).map(|i| if i == focus_at { 0 } else if i == 2 { 2 } else { 1 }).collect();
        let data = LabeledDataset::new(tm, labels, vec!["Ca".into(), "other".into(), "soil".into()]).unwrap();
        let cfg = LearnerConfig {
            params: LearnerParams::Knn(KnnParams { k: 1, standardize: false }),
            seed: 0,
        };
        fit(&cfg, &data).unwrap()
    };
    // 30 cells near the first anchor, 27 near the second, 71 elsewhere
    for i in 0..128u32 {
        let row = match i {
            0..30 => vec![1.0, 0.05],
            30..57 => vec![0.05, 1.0],
            _ => vec![-1.0, -0.95],
        };
        m.push(TileSpec::new("grid", i, 0, 1), row).unwrap();
    }
    let r = focus_coverage(&[train(0), train(1)], &m, "Ca", &[0.5, 0.5]).map_err(|e| e.to_string())?;
    check(
        r.union.len() == 57 && r.total == 128 && (r.fraction - 0.4453).abs() <= 1e-4,
        format!("{} of {} cells -> {:.4}", r.union.len(), r.total, r.fraction),
    )
}

fn run(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vegmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("vegmap {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_session(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    run(dir, &["synth", "--preset", "field", "--width", "768", "--height", "512", "--seed", "11", "--out-dir", "scene"])?;
    let classes = ["soil", "beta_vulgaris", "chenopodium_album", "sinapis_arvensis"];
    for c in classes {
        let mask = format!("scene/masks/{c}.png");
        let out = format!("{c}.jsonl");
        let mut args = vec!["select", "--image", "scene/image.png", "--mask", &mask, "--class", c];
        args.extend(["--size", "32", "--sth", "0.9", "--mass", "1", "--image-id", "s", "--out", &out]);
        if c == "soil" {
            args.push("--keep-achromatic");
        }
        run(dir, &args)?;
    }
    let parts: Vec<String> = classes.iter().map(|c| format!("{c}.jsonl")).collect();
    let mut merge = vec!["merge"];
    merge.extend(parts.iter().map(String::as_str));
    merge.extend(["--out", "all.jsonl"]);
    run(dir, &merge)?;
    run(dir, &["spectrum", "--image", "scene/image.png", "--mask", "scene/masks/soil.png", "--out", "soil.csv"])?;
    run(dir, &["embed", "--manifest", "all.jsonl", "--image", "s=scene/image.png", "--out", "f.csv"])?;
    run(dir, &["cv", "--features", "f.csv", "--labels", "from-manifest", "--manifest", "all.jsonl", "--folds", "3", "--learners", "knn,lr,tree,rf,nn,svm", "--seed", "4", "--no-timing", "--out", "cv.csv", "--json", "cv.json"])?;
    for l in ["nn", "rf", "svm"] {
        let model = format!("{l}.json");
        run(dir, &["train", "--features", "f.csv", "--manifest", "all.jsonl", "--learner", l, "--seed", "4", "--out", &model])?;
    }
    run(dir, &["loo", "--features", "f.csv", "--manifest", "all.jsonl", "--learner", "rf", "--seed", "4", "--out", "loo.json"])?;
    run(dir, &["predict", "--model", "nn.json", "--image", "scene/image.png", "--image-id", "s", "--size", "64", "--map", "map.json", "--overlay", "overlay.png", "--stats", "stats.csv"])?;
    Ok(())
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli_session(&a)?;
    cli_session(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        fa.len() == fb.len() && differing.is_empty() && fa.len() >= 20,
        format!("{} artifacts from two seeded CLI sessions, {} differ {differing:?}", fa.len(), differing.len()),
    )
}

fn main() {
    let started = Instant::now();
    let a = scene(SCENE_A);
    let b = scene(SCENE_B);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("CV accuracy >= 0.90 on 9 tile datasets, < 5 min", Box::new(|| nine_dataset_cv(&a))),
        ("tile counts monotone in STH and shifts", Box::new(|| tile_count_trends(&a))),
        ("map of held-out scene >= 0.90 per-cell accuracy", Box::new(|| map_validation(&a, &b))),
        ("metric oracles", Box::new(metric_oracles)),
        ("confusion matrix contract", Box::new(confusion_contract)),
        ("HSV round trip and primary hues", Box::new(hsv_round_trip)),
        ("MLP gradient check", Box::new(mlp_gradient)),
        ("leave-one-out protocol", Box::new(loo_protocol)),
        ("focus coverage 57/128", Box::new(coverage_arithmetic)),
        ("CLI determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {} [{secs:.1}s]", detail.trim_end()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {} [{secs:.1}s]", detail.trim_end());
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
