//! Classifiers, cross-validation, metrics and validation protocols.
//!
//! Six learners share one [`Model`] envelope: k-nearest neighbours, multinomial
//! logistic regression, a Gini classification tree, a random forest, a
//! one-hidden-layer neural network and an RBF support-vector machine with
//! Platt-calibrated probabilities. Every model returns a probability
//! distribution over its class list; ties in the argmax go to the lowest
//! class index.

mod confusion;
mod coverage;
mod cv;
mod forest;
mod knn;
mod logistic;
mod metrics;
mod mlp;
mod optim;
mod standardize;
mod svm;
mod tree;
mod validate;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureVector};
use crate::tiling::TileManifest;

pub use confusion::{confusion, ConfusionMatrix};
pub use coverage::{focus_coverage, CoverageReport, ModelCoverage};
pub use cv::{cross_validate, stratified_folds, CvReport, CvRow};
pub use forest::{ForestModel, ForestParams};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{LogisticModel, LogisticParams};
pub use metrics::{
    auc, binary_auc, ca, evaluate, f1, log_loss, precision, predicted_classes, recall, specificity, Metrics,
};
pub use mlp::{MlpModel, MlpParams};
pub use standardize::Standardizer;
pub use svm::{SvmModel, SvmParams};
pub use tree::{Node, TreeModel, TreeParams};
pub use validate::{loo_validate, sample_size, LooRecord};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub matrix: FeatureMatrix,
    /// Index into `class_list` per row.
    pub labels: Vec<usize>,
    pub class_list: Vec<String>,
}

impl LabeledDataset {
    pub fn new(matrix: FeatureMatrix, labels: Vec<usize>, class_list: Vec<String>) -> Result<Self> {
        if labels.len() != matrix.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", matrix.len()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_list.len()) {
            return Err(Error::invalid(format!("label index {l} outside class list of {}", class_list.len())));
        }
        let mut names = class_list.clone();
        names.sort();
        names.dedup();
        if names.len() != class_list.len() {
            return Err(Error::invalid("class list contains duplicates"));
        }
        Ok(Self {
            matrix,
            labels,
            class_list,
        })
    }

    /// Labels matrix rows from the manifest by tile key; rows without a label
    /// are dropped. With no explicit class list, classes are ordered by first
    /// appearance in the manifest.
    pub fn from_manifest(matrix: &FeatureMatrix, manifest: &TileManifest, class_list: Option<&[String]>) -> Result<Self> {
        let mut classes: Vec<String> = class_list.map(<[String]>::to_vec).unwrap_or_default();
        if class_list.is_none() {
            for e in manifest.entries() {
                if let Some(l) = &e.label {
                    if !classes.contains(l) {
                        classes.push(l.clone());
                    }
                }
            }
        }
        let labels_by_key: std::collections::HashMap<_, _> = manifest
            .entries()
            .iter()
            .filter_map(|e| e.label.as_ref().map(|l| (&e.tile, l)))
            .collect();
        let mut keep = Vec::new();
        let mut labels = Vec::new();
        for (i, key) in matrix.keys().iter().enumerate() {
            if let Some(l) = labels_by_key.get(key) {
                let idx = classes
                    .iter()
                    .position(|c| c == *l)
                    .ok_or_else(|| Error::invalid(format!("label `{l}` is not in the class list")))?;
                keep.push(i);
                labels.push(idx);
            }
        }
        Self::new(matrix.select_rows(&keep), labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_list.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_list.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_list: self.class_list.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    LogisticRegression,
    Tree,
    RandomForest,
    NeuralNetwork,
    Svm,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 6] = [
        LearnerKind::Knn,
        LearnerKind::LogisticRegression,
        LearnerKind::Tree,
        LearnerKind::RandomForest,
        LearnerKind::NeuralNetwork,
        LearnerKind::Svm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "knn",
            LearnerKind::LogisticRegression => "lr",
            LearnerKind::Tree => "tree",
            LearnerKind::RandomForest => "rf",
            LearnerKind::NeuralNetwork => "nn",
            LearnerKind::Svm => "svm",
        }
    }

    /// Name used in report rows.
    pub fn display_name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "kNN",
            LearnerKind::LogisticRegression => "Logistic Regression",
            LearnerKind::Tree => "Tree",
            LearnerKind::RandomForest => "Random Forest",
            LearnerKind::NeuralNetwork => "Neural Network",
            LearnerKind::Svm => "SVM",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "knn" => LearnerKind::Knn,
            "lr" | "logistic" | "logistic_regression" => LearnerKind::LogisticRegression,
            "tree" | "ct" => LearnerKind::Tree,
            "rf" | "forest" | "random_forest" => LearnerKind::RandomForest,
            "nn" | "mlp" | "neural_network" => LearnerKind::NeuralNetwork,
            "svm" => LearnerKind::Svm,
            other => return Err(Error::invalid(format!("unknown learner `{other}`"))),
        })
    }
}

/// Per-kind hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerParams {
    Knn(KnnParams),
    LogisticRegression(LogisticParams),
    Tree(TreeParams),
    RandomForest(ForestParams),
    NeuralNetwork(MlpParams),
    Svm(SvmParams),
}

impl LearnerParams {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Knn => Self::Knn(KnnParams::default()),
            LearnerKind::LogisticRegression => Self::LogisticRegression(LogisticParams::default()),
            LearnerKind::Tree => Self::Tree(TreeParams::default()),
            LearnerKind::RandomForest => Self::RandomForest(ForestParams::default()),
            LearnerKind::NeuralNetwork => Self::NeuralNetwork(MlpParams::default()),
            LearnerKind::Svm => Self::Svm(SvmParams::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Self::Knn(_) => LearnerKind::Knn,
            Self::LogisticRegression(_) => LearnerKind::LogisticRegression,
            Self::Tree(_) => LearnerKind::Tree,
            Self::RandomForest(_) => LearnerKind::RandomForest,
            Self::NeuralNetwork(_) => LearnerKind::NeuralNetwork,
            Self::Svm(_) => LearnerKind::Svm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        match self {
            Self::Knn(p) if p.k == 0 => bad("kNN needs k >= 1"),
            Self::LogisticRegression(p) if !(p.l2 >= 0.0) || p.max_iter == 0 || !(p.tol > 0.0) => {
                bad("logistic regression needs l2 >= 0, tol > 0 and max_iter >= 1")
            }
            Self::Tree(p) if p.max_depth == 0 || p.min_samples_leaf == 0 || p.max_features == Some(0) => {
                bad("tree needs max_depth >= 1, min_samples_leaf >= 1 and max_features >= 1")
            }
            Self::RandomForest(p) if p.n_trees == 0 || p.max_features == Some(0) => {
                bad("random forest needs at least one tree and max_features >= 1")
            }
            Self::NeuralNetwork(p) if p.hidden == 0 || p.max_epochs == 0 || !(p.learning_rate > 0.0) || !(p.alpha >= 0.0) => {
                bad("neural network needs hidden >= 1, max_epochs >= 1, learning_rate > 0 and alpha >= 0")
            }
            Self::Svm(p) if !(p.c > 0.0) || p.gamma.is_some_and(|g| !(g > 0.0)) || !(p.tol > 0.0) => {
                bad("SVM needs C > 0, gamma > 0 and tol > 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub params: LearnerParams,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(kind: LearnerKind, seed: u64) -> Self {
        Self {
            params: LearnerParams::default_for(kind),
            seed,
        }
    }

    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }
}

/// Fit outcome that does not depend on wall-clock time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub rows: usize,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Knn(KnnModel),
    LogisticRegression(LogisticModel),
    Tree(TreeModel),
    RandomForest(ForestModel),
    NeuralNetwork(MlpModel),
    Svm(SvmModel),
}

impl ModelParams {
    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Knn(m) => m.proba_into(x, out),
            Self::LogisticRegression(m) => m.proba_into(x, out),
            Self::Tree(m) => m.proba_into(x, out),
            Self::RandomForest(m) => m.proba_into(x, out),
            Self::NeuralNetwork(m) => m.proba_into(x, out),
            Self::Svm(m) => m.proba_into(x, out),
        }
    }
}

/// A fitted classifier; immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: LearnerKind,
    pub class_list: Vec<String>,
    pub layout_id: String,
    pub dim: usize,
    pub seed: u64,
    pub training: TrainingInfo,
    pub parameters: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: LearnerKind,
    class_list: Vec<String>,
    layout_id: String,
    dim: usize,
    seed: u64,
    training: TrainingInfo,
    parameters: serde_json::Value,
}

impl Model {
    /// Probability per class; validates the vector layout.
    pub fn predict_proba(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        if v.layout_id != self.layout_id {
            return Err(Error::LayoutMismatch {
                expected: self.layout_id.clone(),
                actual: v.layout_id.clone(),
            });
        }
        self.proba_values(&v.values)
    }

    /// Probability per class for raw feature values in the model's layout.
    pub fn proba_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", self.dim),
                actual: format!("{} features", x.len()),
            });
        }
        let mut out = vec![0.0; self.class_list.len()];
        self.parameters.proba_into(x, &mut out);
        normalize_distribution(&mut out);
        Ok(out)
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if m.layout_id() != self.layout_id {
            return Err(Error::LayoutMismatch {
                expected: self.layout_id.clone(),
                actual: m.layout_id().to_string(),
            });
        }
        m.rows().iter().map(|r| self.proba_values(r)).collect()
    }

    pub fn predict_class(&self, v: &FeatureVector) -> Result<usize> {
        Ok(argmax(&self.predict_proba(v)?))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind,
            class_list: self.class_list.clone(),
            layout_id: self.layout_id.clone(),
            dim: self.dim,
            seed: self.seed,
            training: self.training.clone(),
            parameters: serde_json::to_value(&self.parameters)?,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let p = file.parameters;
        let parameters = match file.kind {
            LearnerKind::Knn => ModelParams::Knn(serde_json::from_value(p)?),
            LearnerKind::LogisticRegression => ModelParams::LogisticRegression(serde_json::from_value(p)?),
            LearnerKind::Tree => ModelParams::Tree(serde_json::from_value(p)?),
            LearnerKind::RandomForest => ModelParams::RandomForest(serde_json::from_value(p)?),
            LearnerKind::NeuralNetwork => ModelParams::NeuralNetwork(serde_json::from_value(p)?),
            LearnerKind::Svm => ModelParams::Svm(serde_json::from_value(p)?),
        };
        Ok(Self {
            kind: file.kind,
            class_list: file.class_list,
            layout_id: file.layout_id,
            dim: file.dim,
            seed: file.seed,
            training: file.training,
            parameters,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Rescales to sum 1; a degenerate vector becomes uniform.
pub(crate) fn normalize_distribution(p: &mut [f64]) {
    for v in p.iter_mut() {
        if !v.is_finite() || *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        for v in p.iter_mut() {
            *v /= s;
        }
    } else {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Trains a classifier. Deterministic for a given config, seed and dataset.
pub fn fit(cfg: &LearnerConfig, data: &LabeledDataset) -> Result<Model> {
    cfg.params.validate()?;
    if data.matrix.dim() == 0 {
        return Err(Error::DegenerateData("dataset has no features".into()));
    }
    let present = data.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateData(format!(
            "training needs at least two classes, found {present}"
        )));
    }
    let (parameters, training) = match &cfg.params {
        LearnerParams::Knn(p) => {
            let (m, t) = knn::fit(p, data);
            (ModelParams::Knn(m), t)
        }
        LearnerParams::LogisticRegression(p) => {
            let (m, t) = logistic::fit(p, data);
            (ModelParams::LogisticRegression(m), t)
        }
        LearnerParams::Tree(p) => {
            let (m, t) = tree::fit(p, data, cfg.seed);
            (ModelParams::Tree(m), t)
        }
        LearnerParams::RandomForest(p) => {
            let (m, t) = forest::fit(p, data, cfg.seed);
            (ModelParams::RandomForest(m), t)
        }
        LearnerParams::NeuralNetwork(p) => {
            let (m, t) = mlp::fit(p, data, cfg.seed);
            (ModelParams::NeuralNetwork(m), t)
        }
        LearnerParams::Svm(p) => {
            let (m, t) = svm::fit(p, data, cfg.seed);
            (ModelParams::Svm(m), t)
        }
    };
    if !training.converged {
        log::warn!(
            "{} did not converge: {}",
            cfg.kind().display_name(),
            training.diagnostics.join("; ")
        );
    }
    Ok(Model {
        kind: cfg.kind(),
        class_list: data.class_list.clone(),
        layout_id: data.matrix.layout_id().to_string(),
        dim: data.matrix.dim(),
        seed: cfg.seed,
        training,
        parameters,
    })
}
