use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Standardizer, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    /// Z-score features before measuring Euclidean distance.
    pub standardize: bool,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5, standardize: true }
    }
}

/// Stores the (scaled) training matrix; votes are uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub n_classes: usize,
    pub scaler: Option<Standardizer>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub(crate) fn fit(p: &KnnParams, data: &LabeledDataset) -> (KnnModel, TrainingInfo) {
    let rows = data.matrix.rows().to_vec();
    let (scaler, rows) = if p.standardize {
        let s = Standardizer::fit(&rows);
        let t = s.transform_rows(&rows);
        (Some(s), t)
    } else {
        (None, rows)
    };
    let model = KnnModel {
        k: p.k,
        n_classes: data.n_classes(),
        scaler,
        rows,
        labels: data.labels.clone(),
    };
    let info = TrainingInfo {
        rows: data.len(),
        iterations: 0,
        converged: true,
        diagnostics: Vec::new(),
    };
    (model, info)
}

impl KnnModel {
    /// Class frequencies among the `k` nearest rows; equal distances prefer the
    /// earlier training row.
    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let q = match &self.scaler {
            Some(s) => s.transform(x),
            None => x.to_vec(),
        };
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(_, i) in &d[..k] {
            out[self.labels[i]] += 1.0 / k as f64;
        }
    }
}
