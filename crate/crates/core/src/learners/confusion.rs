use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[predicted][actual]`; `percent` normalizes each actual-class column
/// to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub percent: Vec<Vec<f64>>,
}

pub fn confusion(actual: &[usize], predicted: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} predictions", actual.len()),
            actual: format!("{} predictions", predicted.len()),
        });
    }
    let k = classes.len();
    if let Some(&bad) = actual.iter().chain(predicted).find(|&&c| c >= k) {
        return Err(Error::invalid(format!("class index {bad} outside class list of {k}")));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&a, &p) in actual.iter().zip(predicted) {
        counts[p][a] += 1;
    }
    let mut percent = vec![vec![0.0; k]; k];
    for a in 0..k {
        let col: usize = (0..k).map(|p| counts[p][a]).sum();
        if col > 0 {
            for p in 0..k {
                percent[p][a] = 100.0 * counts[p][a] as f64 / col as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
        percent,
    })
}

impl ConfusionMatrix {
    /// Diagonal share of all counted predictions.
    pub fn ca(&self) -> f64 {
        let total: usize = self.counts.iter().flatten().sum();
        let diag: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }
}
