//! Long-running project operations. Submission resolves defaults and checks
//! every referenced id; a single worker then runs jobs in submission order.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vegmap_core::features::{FeatureMatrix, BASELINE_LAYOUT};
use vegmap_core::imaging::{HueRangeSet, RgbImage};
use vegmap_core::learners::{fit, LearnerConfig, LearnerKind, LearnerParams, Model};
use vegmap_core::tiling::TileManifest;

use crate::ops::{self, SelectArgs};
use crate::store::{ArtifactKind, JobKind, Project};

pub type Shared = Arc<RwLock<Project>>;

fn read(p: &Shared) -> std::sync::RwLockReadGuard<'_, Project> {
    p.read().unwrap_or_else(|e| e.into_inner())
}

fn write(p: &Shared) -> std::sync::RwLockWriteGuard<'_, Project> {
    p.write().unwrap_or_else(|e| e.into_inner())
}

/// Request bodies. Omitted fields take project defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub image: String,
    pub class: String,
    pub size: Option<u32>,
    pub sth: Option<f64>,
    pub shifts: Option<u32>,
    pub hue_ranges: Option<HueRangeSet>,
    pub sat_min: Option<f64>,
    pub hue_mass: Option<f64>,
    pub max_intervals: Option<usize>,
}

/// One manifest id or several, merged in order.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ManifestRefs {
    pub manifest: Option<String>,
    #[serde(default)]
    pub manifests: Vec<String>,
}

impl ManifestRefs {
    fn ids(&self) -> Result<Vec<String>> {
        let ids: Vec<String> = self.manifest.iter().chain(&self.manifests).cloned().collect();
        if ids.is_empty() {
            bail!("give `manifest` or `manifests`");
        }
        Ok(ids)
    }
}

#[derive(Debug, Deserialize)]
pub struct EmbedRequest {
    #[serde(flatten)]
    pub refs: ManifestRefs,
}

#[derive(Debug, Deserialize)]
pub struct TrainRequest {
    #[serde(flatten)]
    pub refs: ManifestRefs,
    pub features: Option<String>,
    pub learner: String,
    pub params: Option<LearnerParams>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct CvRequest {
    #[serde(flatten)]
    pub refs: ManifestRefs,
    pub features: Option<String>,
    /// Comma-separated list such as `knn,lr,nn`.
    pub learners: Option<String>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub timing: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub model: String,
    pub image: String,
    pub size: Option<u32>,
    pub features: Option<String>,
}

/// Fully resolved parameters, stored on the job record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Resolved {
    Select { args: SelectArgs },
    Embed { manifests: Vec<String> },
    Train { manifests: Vec<String>, features: Option<String>, learner: LearnerConfig },
    Cv { manifests: Vec<String>, features: Option<String>, learners: Vec<LearnerConfig>, folds: usize, seed: u64, timing: bool },
    Predict { model: String, image: String, size: u32, features: Option<String> },
}

fn check_manifests(p: &Project, ids: &[String]) -> Result<()> {
    for id in ids {
        p.artifact(id, ArtifactKind::Manifest)?;
    }
    Ok(())
}

fn check_features(p: &Project, id: &Option<String>) -> Result<()> {
    if let Some(f) = id {
        p.artifact(f, ArtifactKind::Features)?;
    }
    Ok(())
}

fn parse<T: for<'de> Deserialize<'de>>(body: Value) -> Result<T> {
    serde_json::from_value(body).map_err(|e| anyhow!(crate::server::BadRequest(e.to_string())))
}

/// Validates a request, fills defaults and records a queued job. Returns the
/// job id.
pub fn submit(project: &Shared, kind: JobKind, body: Value) -> Result<String> {
    let mut p = write(project);
    let cfg = p.config().clone();
    let resolved = match kind {
        JobKind::Select => {
            let r: SelectRequest = parse(body)?;
            p.image_record(&r.image)?;
            let class = p.require_class(&r.class)?.clone();
            p.mask_bytes(&r.image, &r.class)?;
            let hue = match r.hue_ranges {
                Some(h) => Some(h),
                None => p.hue_ranges(&r.class)?,
            };
            Resolved::Select {
                args: SelectArgs {
                    image_id: r.image,
                    class: r.class,
                    hue,
                    hue_mass: r.hue_mass.unwrap_or(cfg.hue_mass),
                    max_intervals: r.max_intervals.unwrap_or(cfg.max_intervals),
                    sat_min: r.sat_min.unwrap_or(cfg.sat_min),
                    keep_achromatic: class.keep_achromatic,
                    size: r.size.unwrap_or(cfg.tile_size),
                    sth: r.sth.unwrap_or(cfg.sth),
                    shifts: r.shifts.unwrap_or(cfg.shifts),
                },
            }
        }
        JobKind::Embed => {
            let r: EmbedRequest = parse(body)?;
            let manifests = r.refs.ids()?;
            check_manifests(&p, &manifests)?;
            Resolved::Embed { manifests }
        }
        JobKind::Train => {
            let r: TrainRequest = parse(body)?;
            let manifests = r.refs.ids()?;
            check_manifests(&p, &manifests)?;
            check_features(&p, &r.features)?;
            let kind: LearnerKind = r.learner.parse()?;
            let seed = r.seed.unwrap_or(cfg.seed);
            let learner = match r.params {
                Some(params) if params.kind() != kind => bail!("params are for `{}`, not `{kind}`", params.kind()),
                Some(params) => {
                    params.validate()?;
                    LearnerConfig { params, seed }
                }
                None => cfg.learner(kind, seed),
            };
            Resolved::Train {
                manifests,
                features: r.features,
                learner,
            }
        }
        JobKind::Cv => {
            let r: CvRequest = parse(body)?;
            let manifests = r.refs.ids()?;
            check_manifests(&p, &manifests)?;
            check_features(&p, &r.features)?;
            let seed = r.seed.unwrap_or(cfg.seed);
            let learners = cfg.learners_from_list(r.learners.as_deref().unwrap_or(&cfg.default_learners()), seed)?;
            Resolved::Cv {
                manifests,
                features: r.features,
                learners,
                folds: r.folds.unwrap_or(cfg.folds),
                seed,
                timing: r.timing.unwrap_or(true),
            }
        }
        JobKind::Predict => {
            let r: PredictRequest = parse(body)?;
            p.artifact(&r.model, ArtifactKind::Model)?;
            p.image_record(&r.image)?;
            check_features(&p, &r.features)?;
            Resolved::Predict {
                model: r.model,
                image: r.image,
                size: r.size.unwrap_or(cfg.tile_size),
                features: r.features,
            }
        }
    };
    Ok(p.create_job(kind, serde_json::to_value(&resolved)?)?.id)
}

fn load_manifest(p: &Project, ids: &[String]) -> Result<TileManifest> {
    let parts = ids
        .iter()
        .map(|id| Ok(TileManifest::read_jsonl(p.artifact_bytes(id, ArtifactKind::Manifest)?.as_slice())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ops::merge_manifests(&parts))
}

fn load_features(p: &Project, id: &str) -> Result<FeatureMatrix> {
    let layout = p.artifact(id, ArtifactKind::Features)?.params.get("layout").and_then(Value::as_str).map(str::to_string);
    let bytes = p.artifact_bytes(id, ArtifactKind::Features)?;
    Ok(FeatureMatrix::read_csv(bytes.as_slice(), Some(layout.as_deref().unwrap_or(BASELINE_LAYOUT)))?)
}

fn manifest_images(p: &Project, manifest: &TileManifest) -> Result<HashMap<String, RgbImage>> {
    let mut images = HashMap::new();
    for e in manifest.entries() {
        if !images.contains_key(&e.tile.image_id) {
            images.insert(e.tile.image_id.clone(), p.image(&e.tile.image_id)?);
        }
    }
    Ok(images)
}

/// Features for a manifest: the stored matrix when given, baseline
/// embeddings otherwise.
fn features_for(p: &Project, manifest: &TileManifest, features: &Option<String>) -> Result<FeatureMatrix> {
    match features {
        Some(id) => load_features(p, id),
        None => ops::embed(&manifest_images(p, manifest)?, manifest),
    }
}

fn inputs(manifests: &[String], features: &Option<String>) -> Vec<String> {
    manifests.iter().chain(features).cloned().collect()
}

/// Runs one job to completion and returns the id of the artifact it wrote.
/// Inputs are read under a shared lock; the store is locked for writing only
/// while the result is saved.
pub fn execute(project: &Shared, job_id: &str) -> Result<String> {
    let job = read(project).job(job_id)?.clone();
    let resolved: Resolved = serde_json::from_value(job.params.clone())?;
    let params = job.params.clone();
    let (kind, bytes, inputs, params) = match &resolved {
        Resolved::Select { args } => {
            let (img, mask, mask_id) = {
                let p = read(project);
                let id = p.mask_id(&args.image_id, &args.class).unwrap_or_default().to_string();
                (p.image(&args.image_id)?, p.mask(&args.image_id, &args.class)?, id)
            };
            let sel = ops::select(&img, &mask, args)?;
            let mut params = params;
            params["ranges"] = serde_json::to_value(&sel.ranges)?;
            (ArtifactKind::Manifest, sel.manifest.to_jsonl(), vec![args.image_id.clone(), mask_id], params)
        }
        Resolved::Embed { manifests } => {
            let (manifest, images) = {
                let p = read(project);
                let m = load_manifest(&p, manifests)?;
                let images = manifest_images(&p, &m)?;
                (m, images)
            };
            let fm = ops::embed(&images, &manifest)?;
            let mut params = params;
            params["layout"] = Value::from(fm.layout_id());
            (ArtifactKind::Features, fm.to_csv(), manifests.clone(), params)
        }
        Resolved::Train { manifests, features, learner } => {
            let (manifest, fm) = {
                let p = read(project);
                let m = load_manifest(&p, manifests)?;
                let fm = features_for(&p, &m, features)?;
                (m, fm)
            };
            let data = ops::dataset(&fm, &manifest, None)?;
            let model = fit(learner, &data)?;
            (ArtifactKind::Model, model.to_json()?.into_bytes(), inputs(manifests, features), params)
        }
        Resolved::Cv { manifests, features, learners, folds, seed, timing } => {
            let (manifest, fm) = {
                let p = read(project);
                let m = load_manifest(&p, manifests)?;
                let fm = features_for(&p, &m, features)?;
                (m, fm)
            };
            let data = ops::dataset(&fm, &manifest, None)?;
            let mut report = ops::cv(learners, &data, *folds, *seed, None)?;
            if !timing {
                ops::strip_timing(&mut report);
            }
            (ArtifactKind::Report, ops::json_bytes(&report)?, inputs(manifests, features), params)
        }
        Resolved::Predict { model, image, size, features } => {
            let (m, img, fm) = {
                let p = read(project);
                let m = Model::from_json(std::str::from_utf8(&p.artifact_bytes(model, ArtifactKind::Model)?)?)?;
                let fm = features.as_ref().map(|f| load_features(&p, f)).transpose()?;
                (m, p.image(image)?, fm)
            };
            let map = ops::predict(&m, &img, image, *size, fm)?;
            let mut ins = vec![model.clone(), image.clone()];
            ins.extend(features.iter().cloned());
            (ArtifactKind::Map, map.to_json()?.into_bytes(), ins, params)
        }
    };
    write(project).put_artifact(kind, &bytes, inputs, params, job_id)
}

/// Spawns the worker and returns the queue feeding it. Jobs a previous
/// process left unfinished are queued again first.
pub fn start_worker(project: Shared) -> tokio::sync::mpsc::UnboundedSender<String> {
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<String>();
    for id in read(&project).interrupted_jobs() {
        let _ = tx.send(id);
    }
    tokio::spawn(async move {
        while let Some(id) = rx.recv().await {
            if let Err(e) = write(&project).set_job_running(&id) {
                log::error!("job {id}: {e:#}");
                continue;
            }
            let p = project.clone();
            let job = id.clone();
            let outcome = match tokio::task::spawn_blocking(move || execute(&p, &job)).await {
                Ok(Ok(result)) => Ok(result),
                Ok(Err(e)) => Err(format!("{e:#}")),
                Err(e) => Err(format!("job panicked: {e}")),
            };
            if let Err(msg) = &outcome {
                log::warn!("job {id} failed: {msg}");
            }
            if let Err(e) = write(&project).finish_job(&id, outcome) {
                log::error!("job {id}: {e:#}");
            }
        }
    });
    tx
}
