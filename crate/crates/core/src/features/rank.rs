use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Per-feature one-way ANOVA F scores and the induced ranking.
///
/// A feature whose classes are internally constant but differ between each
/// other scores `f64::INFINITY`, which orders ahead of every finite score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatures {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl RankedFeatures {
    /// Indices of the `k` best features, or all of them when `k` is `None`.
    pub fn top(&self, k: Option<usize>) -> Vec<usize> {
        let k = k.unwrap_or(self.order.len()).min(self.order.len());
        self.order[..k].to_vec()
    }
}

/// Ranks features by their one-way ANOVA F statistic across `labels`.
pub fn rank_features(m: &FeatureMatrix, labels: &[usize]) -> Result<RankedFeatures> {
    if labels.len() != m.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} labels", m.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    let n_groups = labels.iter().max().map_or(0, |&l| l + 1);
    let mut counts = vec![0usize; n_groups];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateData("feature ranking needs at least two classes".into()));
    }
    let n = m.len();
    if n <= present {
        return Err(Error::DegenerateData("feature ranking needs more rows than classes".into()));
    }
    let df_between = (present - 1) as f64;
    let df_within = (n - present) as f64;

    let mut scores = Vec::with_capacity(m.dim());
    for f in 0..m.dim() {
        let mut sums = vec![0.0; n_groups];
        for (row, &l) in m.rows().iter().zip(labels) {
            sums[l] += row[f];
        }
        let grand = sums.iter().sum::<f64>() / n as f64;
        let means: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let ssb: f64 = means
            .iter()
            .zip(&counts)
            .map(|(&mu, &c)| c as f64 * (mu - grand) * (mu - grand))
            .sum();
        let ssw: f64 = m
            .rows()
            .iter()
            .zip(labels)
            .map(|(row, &l)| (row[f] - means[l]) * (row[f] - means[l]))
            .sum();
        let sst = ssb + ssw;
        let score = if sst <= f64::MIN_POSITIVE || ssb <= 1e-12 * sst {
            0.0
        } else if ssw <= 1e-12 * sst {
            f64::INFINITY
        } else {
            (ssb / df_between) / (ssw / df_within)
        };
        scores.push(score);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(RankedFeatures { scores, order })
}
