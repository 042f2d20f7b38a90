use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoverage {
    pub model: String,
    pub threshold: f64,
    /// Matrix rows whose focus probability exceeds the threshold.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub focus: String,
    pub total: usize,
    pub per_model: Vec<ModelCoverage>,
    pub union: Vec<usize>,
    pub fraction: f64,
}

/// Tiles each model assigns to `focus` with probability strictly above its
/// threshold, and the union across models.
pub fn focus_coverage(models: &[Model], tiles: &FeatureMatrix, focus: &str, thresholds: &[f64]) -> Result<CoverageReport> {
    if models.len() != thresholds.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} thresholds", models.len()),
            actual: format!("{} thresholds", thresholds.len()),
        });
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0 && **t < 1.0)) {
        return Err(Error::invalid(format!("threshold {t} outside [0, 1)")));
    }
    let mut in_union = vec![false; tiles.len()];
    let mut per_model = Vec::with_capacity(models.len());
    for (m, &t) in models.iter().zip(thresholds) {
        let c = m
            .class_list
            .iter()
            .position(|c| c == focus)
            .ok_or_else(|| Error::invalid(format!("class `{focus}` is not known to the {} model", m.kind.display_name())))?;
        let probs = m.predict_matrix(tiles)?;
        let rows: Vec<usize> = (0..tiles.len()).filter(|&r| probs[r][c] > t).collect();
        for &r in &rows {
            in_union[r] = true;
        }
        per_model.push(ModelCoverage {
            model: m.kind.display_name().to_string(),
            threshold: t,
            rows,
        });
    }
    let union: Vec<usize> = (0..tiles.len()).filter(|&r| in_union[r]).collect();
    let fraction = if tiles.is_empty() {
        0.0
    } else {
        union.len() as f64 / tiles.len() as f64
    };
    Ok(CoverageReport {
        focus: focus.to_string(),
        total: tiles.len(),
        per_model,
        union,
        fraction,
    })
}
