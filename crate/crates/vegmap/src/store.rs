//! Project store: a plain directory tree.
//!
//! ```text
//! vegmap.toml      configuration (class list, defaults)
//! index.json       images, masks, hue ranges, artifacts and jobs
//! journal.jsonl    one line per mutation
//! images/          uploaded images, stored verbatim
//! masks/<image>/   one single-channel PNG per class, stored verbatim
//! artifacts/       manifests, features, models, reports and maps
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vegmap_core::imaging::{CoverMask, HueRangeSet, RgbImage};

use crate::config::{ClassConfig, Config};
use crate::ops::content_id;

pub const CONFIG_FILE: &str = "vegmap.toml";
const INDEX_FILE: &str = "index.json";
const JOURNAL_FILE: &str = "journal.jsonl";

/// Lookup of an id that the store does not hold.
#[derive(Debug)]
pub struct NotFound {
    pub what: &'static str,
    pub id: String,
}

impl fmt::Display for NotFound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown {} `{}`", self.what, self.id)
    }
}

impl std::error::Error for NotFound {}

pub fn not_found(what: &'static str, id: impl Into<String>) -> anyhow::Error {
    NotFound { what, id: id.into() }.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Manifest,
    Features,
    Model,
    Report,
    Map,
}

impl ArtifactKind {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Manifest => "jsonl",
            Self::Features => "csv",
            Self::Model | Self::Report | Self::Map => "json",
        }
    }

    pub fn noun(self) -> &'static str {
        match self {
            Self::Manifest => "manifest",
            Self::Features => "feature matrix",
            Self::Model => "model",
            Self::Report => "report",
            Self::Map => "map",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub id: String,
    pub kind: ArtifactKind,
    pub file: String,
    /// Ids of the images, masks and artifacts this one was computed from.
    pub inputs: Vec<String>,
    pub params: serde_json::Value,
    /// Job that produced the artifact.
    pub job: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Select,
    Embed,
    Train,
    Cv,
    Predict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub params: serde_json::Value,
    pub status: JobStatus,
    pub result: Option<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Index {
    images: BTreeMap<String, ImageRecord>,
    /// image id -> class -> content id of the mask PNG
    masks: BTreeMap<String, BTreeMap<String, String>>,
    hue_ranges: BTreeMap<String, HueRangeSet>,
    artifacts: BTreeMap<String, ArtifactRecord>,
    jobs: BTreeMap<String, Job>,
    next_job: u64,
    journal_seq: u64,
}

#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    config: Config,
    index: Index,
}

/// Summary served by `GET /api/project`.
#[derive(Debug, Serialize)]
pub struct ProjectView<'a> {
    pub root: String,
    pub config: &'a Config,
    pub images: Vec<&'a ImageRecord>,
    pub masks: &'a BTreeMap<String, BTreeMap<String, String>>,
    pub hue_ranges: &'a BTreeMap<String, HueRangeSet>,
    pub artifacts: Vec<&'a ArtifactRecord>,
    pub jobs: Vec<&'a Job>,
}

impl Project {
    pub fn init(root: &Path, config: &Config) -> Result<Self> {
        config.validate()?;
        if root.join(INDEX_FILE).exists() {
            bail!("{} already holds a project", root.display());
        }
        for dir in ["images", "masks", "artifacts"] {
            fs::create_dir_all(root.join(dir)).with_context(|| format!("creating {}", root.join(dir).display()))?;
        }
        fs::write(root.join(CONFIG_FILE), config.to_toml()?)?;
        let project = Self {
            root: root.to_path_buf(),
            config: config.clone(),
            index: Index::default(),
        };
        project.save()?;
        fs::write(root.join(JOURNAL_FILE), b"")?;
        Ok(project)
    }

    /// Opens an existing project and checks that every indexed file exists.
    pub fn open(root: &Path) -> Result<Self> {
        let config = Config::load(&root.join(CONFIG_FILE))?;
        let index_path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).with_context(|| format!("reading {}", index_path.display()))?;
        let index: Index = serde_json::from_str(&text).with_context(|| format!("parsing {}", index_path.display()))?;
        let project = Self {
            root: root.to_path_buf(),
            config,
            index,
        };
        let mut missing = Vec::new();
        for img in project.index.images.values() {
            if !project.root.join(&img.file).is_file() {
                missing.push(img.file.clone());
            }
        }
        for (image, classes) in &project.index.masks {
            for class in classes.keys() {
                let p = project.mask_path(image, class);
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
            }
        }
        for a in project.index.artifacts.values() {
            if !project.root.join(&a.file).is_file() {
                missing.push(a.file.clone());
            }
        }
        if !missing.is_empty() {
            bail!("corrupt project {}: missing {}", root.display(), missing.join(", "));
        }
        Ok(project)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn view(&self) -> ProjectView<'_> {
        ProjectView {
            root: self.root.display().to_string(),
            config: &self.config,
            images: self.index.images.values().collect(),
            masks: &self.index.masks,
            hue_ranges: &self.index.hue_ranges,
            artifacts: self.index.artifacts.values().collect(),
            jobs: self.index.jobs.values().collect(),
        }
    }

    fn save(&self) -> Result<()> {
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.index)?)?;
        fs::rename(&tmp, self.root.join(INDEX_FILE))?;
        Ok(())
    }

    fn journal(&mut self, op: &str, detail: serde_json::Value) -> Result<()> {
        self.index.journal_seq += 1;
        let line = serde_json::json!({ "seq": self.index.journal_seq, "op": op, "detail": detail });
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(JOURNAL_FILE))?;
        writeln!(f, "{line}")?;
        self.save()
    }

    /// Appends a class; existing classes are never removed or renamed.
    pub fn add_class(&mut self, class: ClassConfig) -> Result<()> {
        if self.config.class(&class.name).is_some() {
            bail!("class `{}` already exists", class.name);
        }
        let mut next = self.config.clone();
        next.classes.push(class.clone());
        next.validate()?;
        fs::write(self.root.join(CONFIG_FILE), next.to_toml()?)?;
        self.config = next;
        self.journal("add_class", serde_json::to_value(&class)?)
    }

    pub fn require_class(&self, class: &str) -> Result<&ClassConfig> {
        self.config.class(class).ok_or_else(|| not_found("class", class))
    }

    pub fn images(&self) -> Vec<&ImageRecord> {
        self.index.images.values().collect()
    }

    /// Stores an encoded PNG or JPEG verbatim; uploading the same bytes again
    /// returns the existing record.
    pub fn add_image(&mut self, bytes: &[u8], name: &str) -> Result<ImageRecord> {
        let id = content_id(bytes);
        if let Some(r) = self.index.images.get(&id) {
            return Ok(r.clone());
        }
        let img = RgbImage::decode(bytes).context("image upload is not a decodable PNG or JPEG")?;
        let ext = match image::guess_format(bytes)? {
            image::ImageFormat::Jpeg => "jpg",
            _ => "png",
        };
        let file = format!("images/{id}.{ext}");
        fs::write(self.root.join(&file), bytes)?;
        let record = ImageRecord {
            id: id.clone(),
            name: name.to_string(),
            width: img.width(),
            height: img.height(),
            file,
        };
        self.index.images.insert(id, record.clone());
        self.journal("add_image", serde_json::to_value(&record)?)?;
        Ok(record)
    }

    pub fn image_record(&self, id: &str) -> Result<&ImageRecord> {
        self.index.images.get(id).ok_or_else(|| not_found("image", id))
    }

    pub fn image(&self, id: &str) -> Result<RgbImage> {
        let r = self.image_record(id)?;
        Ok(RgbImage::open(self.root.join(&r.file))?)
    }

    fn mask_path(&self, image: &str, class: &str) -> PathBuf {
        self.root.join("masks").join(image).join(format!("{class}.png"))
    }

    /// Stores the PNG bytes verbatim after checking they decode to a mask of
    /// the image's size.
    pub fn put_mask(&mut self, image: &str, class: &str, bytes: &[u8]) -> Result<String> {
        let rec = self.image_record(image)?.clone();
        self.require_class(class)?;
        let mask = CoverMask::decode(bytes, class).context("mask is not a decodable PNG")?;
        if mask.dims() != (rec.width, rec.height) {
            bail!(
                "mask is {}x{} but image `{image}` is {}x{}",
                mask.width(),
                mask.height(),
                rec.width,
                rec.height
            );
        }
        let path = self.mask_path(image, class);
        fs::create_dir_all(path.parent().expect("mask path has a parent"))?;
        fs::write(&path, bytes)?;
        let id = content_id(bytes);
        self.index.masks.entry(image.to_string()).or_default().insert(class.to_string(), id.clone());
        self.journal("put_mask", serde_json::json!({ "image": image, "class": class, "mask": id }))?;
        Ok(id)
    }

    pub fn mask_bytes(&self, image: &str, class: &str) -> Result<Vec<u8>> {
        self.image_record(image)?;
        self.require_class(class)?;
        if !self.index.masks.get(image).is_some_and(|m| m.contains_key(class)) {
            return Err(not_found("mask", format!("{image}/{class}")));
        }
        Ok(fs::read(self.mask_path(image, class))?)
    }

    pub fn mask_id(&self, image: &str, class: &str) -> Option<&str> {
        self.index.masks.get(image)?.get(class).map(String::as_str)
    }

    pub fn mask(&self, image: &str, class: &str) -> Result<CoverMask> {
        Ok(CoverMask::decode(&self.mask_bytes(image, class)?, class)?)
    }

    /// Stored ranges first, then ranges from the config file.
    pub fn hue_ranges(&self, class: &str) -> Result<Option<HueRangeSet>> {
        let c = self.require_class(class)?;
        Ok(self.index.hue_ranges.get(class).cloned().or_else(|| c.hue_ranges.clone()))
    }

    pub fn set_hue_ranges(&mut self, class: &str, ranges: HueRangeSet) -> Result<()> {
        self.require_class(class)?;
        if ranges.is_empty() {
            bail!("hue ranges must not be empty");
        }
        self.index.hue_ranges.insert(class.to_string(), ranges.clone());
        self.journal("set_hue_ranges", serde_json::json!({ "class": class, "ranges": ranges }))
    }

    /// Writes an artifact under its content id. Storing identical bytes again
    /// keeps the first record.
    pub fn put_artifact(
        &mut self,
        kind: ArtifactKind,
        bytes: &[u8],
        inputs: Vec<String>,
        params: serde_json::Value,
        job: &str,
    ) -> Result<String> {
        let id = content_id(bytes);
        if self.index.artifacts.contains_key(&id) {
            return Ok(id);
        }
        let file = format!("artifacts/{id}.{}", kind.extension());
        fs::write(self.root.join(&file), bytes)?;
        let record = ArtifactRecord {
            id: id.clone(),
            kind,
            file,
            inputs,
            params,
            job: job.to_string(),
        };
        self.index.artifacts.insert(id.clone(), record);
        self.journal("put_artifact", serde_json::json!({ "id": id, "kind": kind, "job": job }))?;
        Ok(id)
    }

    pub fn artifact(&self, id: &str, kind: ArtifactKind) -> Result<&ArtifactRecord> {
        match self.index.artifacts.get(id) {
            Some(a) if a.kind == kind => Ok(a),
            _ => Err(not_found(kind.noun(), id)),
        }
    }

    pub fn artifact_bytes(&self, id: &str, kind: ArtifactKind) -> Result<Vec<u8>> {
        let a = self.artifact(id, kind)?;
        Ok(fs::read(self.root.join(&a.file))?)
    }

    pub fn create_job(&mut self, kind: JobKind, params: serde_json::Value) -> Result<Job> {
        self.index.next_job += 1;
        let job = Job {
            id: format!("job-{:06}", self.index.next_job),
            kind,
            params,
            status: JobStatus::Queued,
            result: None,
            diagnostics: Vec::new(),
        };
        self.index.jobs.insert(job.id.clone(), job.clone());
        self.journal("create_job", serde_json::to_value(&job)?)?;
        Ok(job)
    }

    pub fn job(&self, id: &str) -> Result<&Job> {
        self.index.jobs.get(id).ok_or_else(|| not_found("job", id))
    }

    pub fn set_job_running(&mut self, id: &str) -> Result<()> {
        self.index.jobs.get_mut(id).ok_or_else(|| not_found("job", id))?.status = JobStatus::Running;
        self.save()
    }

    pub fn finish_job(&mut self, id: &str, outcome: std::result::Result<String, String>) -> Result<()> {
        let job = self.index.jobs.get_mut(id).ok_or_else(|| not_found("job", id))?;
        match outcome {
            Ok(result) => {
                job.status = JobStatus::Done;
                job.result = Some(result);
            }
            Err(msg) => {
                job.status = JobStatus::Failed;
                job.diagnostics.push(msg);
            }
        }
        let detail = serde_json::json!({ "id": id, "status": job.status, "result": job.result, "diagnostics": job.diagnostics });
        self.journal("finish_job", detail)
    }

    /// Jobs left queued or running by a previous process.
    pub fn interrupted_jobs(&self) -> Vec<String> {
        self.index
            .jobs
            .values()
            .filter(|j| matches!(j.status, JobStatus::Queued | JobStatus::Running))
            .map(|j| j.id.clone())
            .collect()
    }
}
