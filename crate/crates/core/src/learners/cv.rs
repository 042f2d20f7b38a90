use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{confusion, evaluate, fit, predicted_classes, ConfusionMatrix, LabeledDataset, LearnerConfig, Metrics};
use crate::error::{Error, Result};

/// Fold index per row. Each class is shuffled, then dealt round-robin; the
/// dealing position carries over between classes so fold sizes stay within
/// one of each other.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == c).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            return Err(Error::DegenerateData(format!(
                "class {c} has {} rows, fewer than {k} folds",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for (i, &r) in rows.iter().enumerate() {
            folds[r] = (offset + i) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(folds)
}

/// One learner's pooled result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: LearnerConfig,
    pub model: String,
    /// Wall-clock seconds summed over folds.
    pub train_time: f64,
    pub test_time: f64,
    pub metrics: Metrics,
    pub confusion: Option<ConfusionMatrix>,
    /// Held-out probabilities per dataset row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probs: Vec<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub images: usize,
    pub folds: usize,
    pub seed: u64,
    pub class_list: Vec<String>,
    pub rows: Vec<CvRow>,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

impl CvReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "dataset",
        "images",
        "model",
        "train_time",
        "test_time",
        "auc",
        "ca",
        "f1",
        "precision",
        "recall",
        "logloss",
        "specificity",
        "error",
    ];

    /// Writes one CSV row per learner. With `timing` off the time columns are
    /// zero so that reruns produce identical bytes.
    pub fn write_csv<W: Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let t = |v: f64| if timing { format!("{v:.4}") } else { "0".to_string() };
            let m = &r.metrics;
            out.write_record([
                self.dataset.clone(),
                self.images.to_string(),
                r.model.clone(),
                t(r.train_time),
                t(r.test_time),
                num(m.auc),
                num(m.ca),
                num(m.f1),
                num(m.precision),
                num(m.recall),
                num(m.logloss),
                num(m.specificity),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, timing: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

struct FoldResult {
    config: usize,
    rows: Vec<usize>,
    probs: std::result::Result<Vec<Vec<f64>>, String>,
    train_time: f64,
    test_time: f64,
}

/// k-fold stratified cross-validation of every config on the same folds.
/// Held-out predictions are pooled and scored once per learner. A learner
/// that fails gets an error row; the others still run.
pub fn cross_validate(cfgs: &[LearnerConfig], data: &LabeledDataset, k: usize, seed: u64) -> Result<CvReport> {
    let folds = stratified_folds(&data.labels, k, seed)?;
    let tasks: Vec<(usize, usize)> = (0..cfgs.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let results: Vec<FoldResult> = tasks
        .par_iter()
        .map(|&(ci, f)| {
            let train: Vec<usize> = (0..data.len()).filter(|&r| folds[r] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&r| folds[r] == f).collect();
            let t0 = Instant::now();
            let model = fit(&cfgs[ci], &data.subset(&train));
            let train_time = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let probs = model
                .and_then(|m| test.iter().map(|&r| m.proba_values(data.matrix.row(r))).collect::<Result<Vec<_>>>())
                .map_err(|e| e.to_string());
            FoldResult {
                config: ci,
                rows: test,
                probs,
                train_time,
                test_time: t1.elapsed().as_secs_f64(),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(cfgs.len());
    for (ci, cfg) in cfgs.iter().enumerate() {
        let mut pooled = vec![Vec::new(); data.len()];
        let (mut train_time, mut test_time) = (0.0, 0.0);
        let mut error = None;
        for r in results.iter().filter(|r| r.config == ci) {
            train_time += r.train_time;
            test_time += r.test_time;
            match &r.probs {
                Ok(p) => {
                    for (&row, pr) in r.rows.iter().zip(p) {
                        pooled[row] = pr.clone();
                    }
                }
                Err(e) => {
                    error.get_or_insert_with(|| e.clone());
                }
            }
        }
        let (metrics, conf, probs) = if error.is_some() {
            (Metrics::nan(), None, Vec::new())
        } else {
            let m = evaluate(&pooled, &data.labels, data.n_classes());
            let c = confusion(&data.labels, &predicted_classes(&pooled), &data.class_list)?;
            (m, Some(c), pooled)
        };
        rows.push(CvRow {
            config: cfg.clone(),
            model: cfg.kind().display_name().to_string(),
            train_time,
            test_time,
            metrics,
            confusion: conf,
            probs,
            error,
        });
    }
    Ok(CvReport {
        dataset: data.matrix.layout_id().to_string(),
        images: data.len(),
        folds: k,
        seed,
        class_list: data.class_list.clone(),
        rows,
    })
}
