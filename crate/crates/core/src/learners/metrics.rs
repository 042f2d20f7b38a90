//! Classification metrics over pooled predictions. Per-class scores are
//! averaged with weights equal to each class's share of the actual labels.

use serde::{Deserialize, Serialize};

use super::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub ca: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub logloss: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn nan() -> Self {
        Self {
            auc: f64::NAN,
            ca: f64::NAN,
            f1: f64::NAN,
            precision: f64::NAN,
            recall: f64::NAN,
            logloss: f64::NAN,
            specificity: f64::NAN,
        }
    }
}

pub fn predicted_classes(probs: &[Vec<f64>]) -> Vec<usize> {
    probs.iter().map(|p| argmax(p)).collect()
}

/// Mann-Whitney AUC with average ranks for tied scores; NaN when either side
/// is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&t| positive[t]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

fn prevalence(actual: &[usize], n_classes: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_classes];
    for &a in actual {
        w[a] += 1.0;
    }
    let n = actual.len() as f64;
    w.iter_mut().for_each(|v| *v /= n);
    w
}

/// Prevalence-weighted one-vs-rest AUC; NaN unless at least two classes occur.
pub fn auc(probs: &[Vec<f64>], actual: &[usize], n_classes: usize) -> f64 {
    let w = prevalence(actual, n_classes);
    if w.iter().filter(|&&v| v > 0.0).count() < 2 {
        return f64::NAN;
    }
    (0..n_classes)
        .filter(|&c| w[c] > 0.0)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = actual.iter().map(|&a| a == c).collect();
            w[c] * binary_auc(&scores, &pos)
        })
        .sum()
}

pub fn ca(actual: &[usize], predicted: &[usize]) -> f64 {
    let hits = actual.iter().zip(predicted).filter(|(a, p)| a == p).count();
    hits as f64 / actual.len() as f64
}

/// `(tp, fp, fn, tn)` for class `c`.
fn counts(actual: &[usize], predicted: &[usize], c: usize) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &p) in actual.iter().zip(predicted) {
        match (a == c, p == c) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fneg += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    (tp, fp, fneg, tn)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn weighted(actual: &[usize], predicted: &[usize], n_classes: usize, per_class: impl Fn(f64, f64, f64, f64) -> f64) -> f64 {
    let w = prevalence(actual, n_classes);
    (0..n_classes)
        .filter(|&c| w[c] > 0.0)
        .map(|c| {
            let (tp, fp, fneg, tn) = counts(actual, predicted, c);
            w[c] * per_class(tp, fp, fneg, tn)
        })
        .sum()
}

pub fn precision(actual: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    weighted(actual, predicted, n_classes, |tp, fp, _, _| ratio(tp, tp + fp))
}

pub fn recall(actual: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    weighted(actual, predicted, n_classes, |tp, _, fneg, _| ratio(tp, tp + fneg))
}

pub fn f1(actual: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    weighted(actual, predicted, n_classes, |tp, fp, fneg, _| ratio(2.0 * tp, 2.0 * tp + fp + fneg))
}

pub fn specificity(actual: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    weighted(actual, predicted, n_classes, |_, fp, _, tn| ratio(tn, tn + fp))
}

/// Mean negative log-probability of the actual class, clipped to
/// `[1e-15, 1 - 1e-15]`.
pub fn log_loss(probs: &[Vec<f64>], actual: &[usize]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(actual)
        .map(|(p, &a)| -p[a].clamp(1e-15, 1.0 - 1e-15).ln())
        .sum();
    total / actual.len() as f64
}

pub fn evaluate(probs: &[Vec<f64>], actual: &[usize], n_classes: usize) -> Metrics {
    if actual.is_empty() {
        return Metrics::nan();
    }
    let predicted = predicted_classes(probs);
    Metrics {
        auc: auc(probs, actual, n_classes),
        ca: ca(actual, &predicted),
        f1: f1(actual, &predicted, n_classes),
        precision: precision(actual, &predicted, n_classes),
        recall: recall(actual, &predicted, n_classes),
        logloss: log_loss(probs, actual),
        specificity: specificity(actual, &predicted, n_classes),
    }
}
