use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vegmap_core::features::{hclust, nearest_neighbors, rank_features, FeatureMatrix, BASELINE_DIM, BASELINE_LAYOUT};
use vegmap_core::imaging::{
    compute_hue_spectrum, derive_hue_ranges, refine_mask, CoverMask, HueRangeSet, HueSpectrum, RefineOptions, RgbImage,
};
use vegmap_core::learners::{fit, focus_coverage, loo_validate, LearnerConfig, LearnerKind, LearnerParams, Model};
use vegmap_core::mapper::PredictionMap;
use vegmap_core::synthfield::{generate_scene, SceneSpec};
use vegmap_core::tiling::{ManifestEntry, Provenance, TileManifest};

use crate::config::Config;
use crate::ops::{self, content_id, SelectArgs};
use crate::store::{Project, CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "vegmap", version, about = "Semi-automatic vegetation mapping from UAV RGB imagery")]
pub struct Cli {
    /// TOML file with class list and defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Layout id for feature CSVs. Defaults to the baseline layout for
    /// 67-column files and `external:D` otherwise.
    #[arg(long, global = true)]
    pub layout: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hue histogram of the masked pixels, as a 360-row CSV.
    Spectrum {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        sat_min: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Narrowest hue ranges holding a share of a spectrum.
    Ranges {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        max_intervals: Option<usize>,
        /// Also write the ranges as a JSON array of [lo, hi].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep only mask pixels whose hue lies in the given ranges.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// `lo-hi[,lo-hi...]`
        #[arg(long)]
        hue: HueRangeSet,
        #[arg(long)]
        sat_min: Option<f64>,
        #[arg(long)]
        keep_achromatic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Harvest training tiles from a painted mask.
    Select(SelectCmd),
    /// Combine manifests; a tile keeps its first label.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline features for every manifest tile.
    Embed {
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
        /// `path` or `id=path`; the id defaults to the file's content id.
        #[arg(long, required = true, num_args = 1..)]
        image: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank feature columns by ANOVA F against manifest labels.
    Rank {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine average-linkage clustering of feature rows.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        /// Also cut the tree into at most 2^depth clusters.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Suggest unlabelled tiles closest to labelled seeds.
    Neighbors {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one learner.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        learner: LearnerKind,
        /// JSON file with hyperparameters, e.g. {"kind": "knn", "k": 5, "standardize": true}.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation of several learners.
    Cv(CvCmd),
    /// Leave-one-out evaluation of a sample of tiles.
    Loo {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        learner: LearnerKind,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every grid cell of an image.
    Predict(PredictCmd),
    /// Share of tiles some model accepts as the focus class.
    Coverage {
        #[arg(long = "model", required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        /// One per model, in the same order.
        #[arg(long = "threshold", required = true, num_args = 1..)]
        thresholds: Vec<f64>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        focus: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic field with ground truth and per-class masks.
    Synth {
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 2048)]
        width: u32,
        #[arg(long, default_value_t = 1536)]
        height: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Receives image.png, truth.png, spec.json and masks/<class>.png.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Create an empty project directory.
    Init { dir: PathBuf },
    /// Serve a project over HTTP.
    Serve {
        #[arg(long)]
        project: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Field,
}

#[derive(Debug, Args)]
pub struct SelectCmd {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    class: String,
    /// Image id written into the manifest; defaults to the file's content id.
    #[arg(long)]
    image_id: Option<String>,
    /// `lo-hi[,lo-hi...]`; derived from the masked spectrum when omitted.
    #[arg(long)]
    hue: Option<HueRangeSet>,
    #[arg(long)]
    mass: Option<f64>,
    #[arg(long)]
    max_intervals: Option<usize>,
    #[arg(long)]
    sat_min: Option<f64>,
    #[arg(long)]
    keep_achromatic: bool,
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    sth: Option<f64>,
    #[arg(long)]
    shifts: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvCmd {
    #[arg(long)]
    features: PathBuf,
    /// `from-manifest`, or a manifest file holding the labels.
    #[arg(long, default_value = "from-manifest")]
    labels: String,
    #[arg(long, num_args = 1..)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated: knn, lr, tree, rf, nn, svm.
    #[arg(long)]
    learners: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write zero train/test times so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Dataset name for the report rows.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Full report with confusion matrices and pooled probabilities.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long)]
    size: Option<u32>,
    /// Embeddings for every grid cell, for models trained on imported features.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Classes to tint, comma-separated; all when omitted.
    #[arg(long)]
    classes: Option<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes an output and prints `kind<TAB>id<TAB>path`.
fn emit(kind: &str, path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let id = content_id(bytes);
    println!("{kind}\t{id}\t{}", path.display());
    Ok(id)
}

fn load_image(path: &Path) -> Result<(RgbImage, String)> {
    let bytes = read(path)?;
    let img = RgbImage::decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok((img, content_id(&bytes)))
}

fn load_manifest(paths: &[PathBuf]) -> Result<TileManifest> {
    let parts = paths
        .iter()
        .map(|p| TileManifest::read_jsonl(read(p)?.as_slice()).with_context(|| format!("parsing {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ops::merge_manifests(&parts))
}

pub fn load_features(path: &Path, layout: Option<&str>) -> Result<FeatureMatrix> {
    let bytes = read(path)?;
    let m = FeatureMatrix::read_csv(bytes.as_slice(), layout).with_context(|| format!("parsing {}", path.display()))?;
    Ok(if layout.is_none() && m.dim() == BASELINE_DIM {
        m.with_layout(BASELINE_LAYOUT)
    } else {
        m
    })
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn learner_config(cfg: &Config, kind: LearnerKind, params: Option<&Path>, seed: u64) -> Result<LearnerConfig> {
    let Some(path) = params else {
        return Ok(cfg.learner(kind, seed));
    };
    let params: LearnerParams = serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if params.kind() != kind {
        bail!("{} holds `{}` parameters, not `{kind}`", path.display(), params.kind());
    }
    params.validate()?;
    Ok(LearnerConfig { params, seed })
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    ops::json_bytes(value)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let layout = cli.layout.as_deref();
    match cli.command {
        Command::Spectrum { image, mask, sat_min, out } => {
            let (img, _) = load_image(&image)?;
            let mask = CoverMask::decode(&read(&mask)?, "mask")?;
            let s = compute_hue_spectrum(&img, &mask, sat_min.unwrap_or(cfg.sat_min))?;
            let mut bytes = Vec::new();
            s.write_csv(&mut bytes)?;
            emit("spectrum", &out, &bytes)?;
        }
        Command::Ranges { spectrum, mass, max_intervals, out } => {
            let s = HueSpectrum::read_csv(read(&spectrum)?.as_slice())?;
            let r = derive_hue_ranges(&s, mass.unwrap_or(cfg.hue_mass), max_intervals.unwrap_or(cfg.max_intervals))?;
            println!("{r}");
            if let Some(out) = out {
                emit("ranges", &out, &json(&r)?)?;
            }
        }
        Command::Refine { image, mask, hue, sat_min, keep_achromatic, out } => {
            let (img, _) = load_image(&image)?;
            let mask = CoverMask::decode(&read(&mask)?, "mask")?;
            let opts = RefineOptions {
                sat_min: sat_min.unwrap_or(cfg.sat_min),
                keep_achromatic,
            };
            emit("mask", &out, &refine_mask(&mask, &img, &hue, opts)?.encode_png()?)?;
        }
        Command::Select(c) => {
            let (img, id) = load_image(&c.image)?;
            let mask = CoverMask::decode(&read(&c.mask)?, &c.class)?;
            let class = cfg.class(&c.class);
            let args = SelectArgs {
                image_id: c.image_id.unwrap_or(id),
                class: c.class.clone(),
                hue: c.hue.or_else(|| class.and_then(|k| k.hue_ranges.clone())),
                hue_mass: c.mass.unwrap_or(cfg.hue_mass),
                max_intervals: c.max_intervals.unwrap_or(cfg.max_intervals),
                sat_min: c.sat_min.unwrap_or(cfg.sat_min),
                keep_achromatic: c.keep_achromatic || class.is_some_and(|k| k.keep_achromatic),
                size: c.size.unwrap_or(cfg.tile_size),
                sth: c.sth.unwrap_or(cfg.sth),
                shifts: c.shifts.unwrap_or(cfg.shifts),
            };
            let sel = ops::select(&img, &mask, &args)?;
            eprintln!("{}: {} tiles, hue {}", c.class, sel.manifest.len(), sel.ranges);
            emit("manifest", &c.out, &sel.manifest.to_jsonl())?;
        }
        Command::Merge { inputs, out } => {
            emit("manifest", &out, &load_manifest(&inputs)?.to_jsonl())?;
        }
        Command::Embed { manifest, image, out } => {
            let manifest = load_manifest(&manifest)?;
            let mut images = HashMap::new();
            for spec in &image {
                let (id, path) = match spec.split_once('=') {
                    Some((id, path)) => (Some(id.to_string()), PathBuf::from(path)),
                    None => (None, PathBuf::from(spec)),
                };
                let (img, hash) = load_image(&path)?;
                images.insert(id.unwrap_or(hash), img);
            }
            emit("features", &out, &ops::embed(&images, &manifest)?.to_csv())?;
        }
        Command::Rank { features, manifest, out } => {
            let fm = load_features(&features, layout)?;
            let data = ops::dataset(&fm, &load_manifest(&[manifest])?, None)?;
            let ranked = rank_features(&data.matrix, &data.labels)?;
            emit("ranking", &out, &json(&ranked)?)?;
        }
        Command::Cluster { features, depth, out } => {
            let fm = load_features(&features, layout)?;
            let d = hclust(&fm)?;
            let clusters = d.cut_at_depth(depth);
            let body = serde_json::json!({ "tiles": fm.keys(), "clusters": clusters, "dendrogram": d });
            emit("clusters", &out, &json(&body)?)?;
        }
        Command::Neighbors { features, seeds, k, out } => {
            let fm = load_features(&features, layout)?;
            let seed_manifest = load_manifest(&[seeds])?;
            let (mut seed_rows, mut pool_rows) = (Vec::new(), Vec::new());
            for (i, key) in fm.keys().iter().enumerate() {
                if seed_manifest.label_of(key).is_some() {
                    seed_rows.push(i);
                } else {
                    pool_rows.push(i);
                }
            }
            let found = nearest_neighbors(&fm.select_rows(&seed_rows), &fm.select_rows(&pool_rows), k)?;
            let suggested = TileManifest::from_entries(found.into_iter().map(|n| ManifestEntry {
                label: seed_manifest.label_of(&n.seed).map(str::to_string),
                tile: n.tile,
                provenance: Provenance::NeighborSuggested,
            }))?;
            emit("manifest", &out, &suggested.to_jsonl())?;
        }
        Command::Train { features, manifest, learner, params, seed, out } => {
            let fm = load_features(&features, layout)?;
            let data = ops::dataset(&fm, &load_manifest(&manifest)?, None)?;
            let lc = learner_config(&cfg, learner, params.as_deref(), seed.unwrap_or(cfg.seed))?;
            let model = fit(&lc, &data)?;
            if !model.training.converged {
                log::warn!("{learner} did not converge: {}", model.training.diagnostics.join("; "));
            }
            emit("model", &out, model.to_json()?.as_bytes())?;
        }
        Command::Cv(c) => run_cv(&cfg, layout, c)?,
        Command::Loo { features, manifest, learner, fraction, seed, out } => {
            let fm = load_features(&features, layout)?;
            let data = ops::dataset(&fm, &load_manifest(&manifest)?, None)?;
            let seed = seed.unwrap_or(cfg.seed);
            let lc = cfg.learner(learner, seed);
            let records = loo_validate(&lc, &data, fraction.unwrap_or(cfg.loo_fraction), seed)?;
            let correct = records.iter().filter(|r| r.actual == r.predicted).count();
            eprintln!("{correct}/{} tiles predicted correctly", records.len());
            emit("loo", &out, &json(&records)?)?;
        }
        Command::Predict(c) => run_predict(&cfg, layout, c)?,
        Command::Coverage { models, thresholds, features, focus, out } => {
            if models.len() != thresholds.len() {
                bail!("{} models but {} thresholds", models.len(), thresholds.len());
            }
            let models = models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
            let fm = load_features(&features, layout)?;
            let report = focus_coverage(&models, &fm, &focus, &thresholds)?;
            eprintln!("{} of {} tiles accepted ({:.1}%)", report.union.len(), report.total, 100.0 * report.fraction);
            emit("coverage", &out, &json(&report)?)?;
        }
        Command::Synth { spec, preset, width, height, seed, out_dir } => {
            let mut spec = match (spec, preset) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    if path.extension().is_some_and(|e| e == "json") {
                        serde_json::from_str(&text)?
                    } else {
                        toml::from_str(&text)?
                    }
                }
                (None, Some(Preset::Field)) => SceneSpec::field(width, height, cfg.seed),
                (None, None) => bail!("give --spec or --preset"),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (img, gt) = generate_scene(&spec)?;
            emit("image", &out_dir.join("image.png"), &img.encode_png()?)?;
            emit("truth", &out_dir.join("truth.png"), &gt.encode_png()?)?;
            emit("spec", &out_dir.join("spec.json"), &json(&spec)?)?;
            for (class, png) in ops::truth_masks(&gt)? {
                emit("mask", &out_dir.join("masks").join(format!("{class}.png")), &png)?;
            }
        }
        Command::Init { dir } => {
            Project::init(&dir, &cfg)?;
            println!("project\t{}\t{}", dir.display(), dir.join(CONFIG_FILE).display());
        }
        Command::Serve { project, bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(&project, bind))?;
        }
    }
    Ok(())
}

fn run_cv(cfg: &Config, layout: Option<&str>, c: CvCmd) -> Result<()> {
    let fm = load_features(&c.features, layout)?;
    let manifests = match c.labels.as_str() {
        "from-manifest" if c.manifest.is_empty() => bail!("--labels from-manifest needs --manifest"),
        "from-manifest" => c.manifest.clone(),
        path => vec![PathBuf::from(path)],
    };
    let data = ops::dataset(&fm, &load_manifest(&manifests)?, None)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let learners = cfg.learners_from_list(c.learners.as_deref().unwrap_or(&cfg.default_learners()), seed)?;
    let mut report = ops::cv(&learners, &data, c.folds.unwrap_or(cfg.folds), seed, c.name.as_deref())?;
    if c.no_timing {
        ops::strip_timing(&mut report);
    }
    for row in &report.rows {
        match &row.error {
            Some(e) => eprintln!("{:<20} failed: {e}", row.model),
            None => eprintln!("{:<20} CA {:.3}  AUC {:.3}", row.model, row.metrics.ca, row.metrics.auc),
        }
    }
    emit("report", &c.out, report.to_csv(!c.no_timing)?.as_bytes())?;
    if let Some(path) = &c.json {
        emit("report", path, &json(&report)?)?;
    }
    Ok(())
}

fn run_predict(cfg: &Config, layout: Option<&str>, c: PredictCmd) -> Result<()> {
    let model = load_model(&c.model)?;
    let (img, id) = load_image(&c.image)?;
    let features = c.features.as_deref().map(|p| load_features(p, layout)).transpose()?;
    let map: PredictionMap = ops::predict(&model, &img, &c.image_id.unwrap_or(id), c.size.unwrap_or(cfg.tile_size), features)?;
    if c.map.is_none() && c.overlay.is_none() && c.stats.is_none() {
        bail!("give at least one of --map, --overlay, --stats");
    }
    if let Some(p) = &c.map {
        emit("map", p, map.to_json()?.as_bytes())?;
    }
    if let Some(p) = &c.overlay {
        let classes: Vec<String> = c
            .classes
            .as_deref()
            .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        let known: Vec<(String, [u8; 3])> = cfg.class_names().into_iter().zip(cfg.palette()?).collect();
        let palette = ops::palette_for(&map.class_list, &known);
        emit("overlay", p, &ops::overlay_png(&map, &img, &classes, &palette, c.alpha)?)?;
    }
    if let Some(p) = &c.stats {
        emit("stats", p, &ops::area_csv(&map)?)?;
    }
    Ok(())
}
