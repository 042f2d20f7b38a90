use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, fit, LabeledDataset, LearnerConfig};
use crate::error::{Error, Result};
use crate::tiling::TileSpec;

/// One held-out tile: the model saw every other row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRecord {
    pub row: usize,
    pub tile: TileSpec,
    pub actual: String,
    pub predicted: String,
    pub prob_actual: f64,
    pub prob_predicted: f64,
    pub probs: Vec<f64>,
    pub train_rows: usize,
}

/// `ceil(fraction * n)`, tolerant of products like `0.1 * 140` that land a
/// hair above an integer.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Per-class quotas summing to `m`, proportional to class counts; leftover
/// slots go to the largest remainders, lower class index first.
fn quotas(counts: &[usize], m: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let exact: Vec<f64> = counts.iter().map(|&c| m as f64 * c as f64 / n as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = m - q.iter().sum::<usize>();
    for c in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        if q[c] < counts[c] {
            q[c] += 1;
            left -= 1;
        }
    }
    q
}

/// Samples `ceil(fraction * N)` rows (stratified, seeded) and evaluates each
/// with a model trained on the remaining `N - 1` rows. Records are in row order.
pub fn loo_validate(cfg: &LearnerConfig, data: &LabeledDataset, fraction: f64, seed: u64) -> Result<Vec<LooRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::DegenerateData("leave-one-out needs at least two rows".into()));
    }
    let m = sample_size(n, fraction);
    let q = quotas(&data.class_counts(), m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = Vec::with_capacity(m);
    for (c, &take) in q.iter().enumerate() {
        let mut rows: Vec<usize> = (0..n).filter(|&r| data.labels[r] == c).collect();
        rows.shuffle(&mut rng);
        sample.extend_from_slice(&rows[..take]);
    }
    sample.sort_unstable();

    sample
        .par_iter()
        .map(|&row| {
            let rest: Vec<usize> = (0..n).filter(|&r| r != row).collect();
            let train = data.subset(&rest);
            let model = fit(cfg, &train)?;
            let probs = model.proba_values(data.matrix.row(row))?;
            let actual = data.labels[row];
            let predicted = argmax(&probs);
            Ok(LooRecord {
                row,
                tile: data.matrix.key(row).clone(),
                actual: data.class_list[actual].clone(),
                predicted: data.class_list[predicted].clone(),
                prob_actual: probs[actual],
                prob_predicted: probs[predicted],
                probs,
                train_rows: train.len(),
            })
        })
        .collect()
}
