use serde::{Deserialize, Serialize};

use super::optim::lbfgs;
use super::{softmax_in_place, LabeledDataset, Standardizer, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Weight of the `0.5 * ||W||^2` penalty against the summed cross-entropy.
    pub l2: f64,
    /// Gradient-norm stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

/// Multinomial softmax regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub scaler: Standardizer,
    /// Row-major `n_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Summed cross-entropy plus `0.5 * l2 * ||W||^2` (bias unpenalized) and its
/// gradient over the flat `[W, b]` parameter vector.
pub(crate) fn objective(theta: &[f64], grad: &mut [f64], x: &[Vec<f64>], y: &[usize], k: usize, l2: f64) -> f64 {
    let d = x.first().map_or(0, Vec::len);
    let (w, b) = theta.split_at(k * d);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for (row, &label) in x.iter().zip(y) {
        for c in 0..k {
            z[c] = b[c] + w[c * d..(c + 1) * d].iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        for c in 0..k {
            let p = (z[c] - lse).exp();
            let r = p - if c == label { 1.0 } else { 0.0 };
            let gw = &mut grad[c * d..(c + 1) * d];
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
            grad[k * d + c] += r;
        }
    }
    for (i, wi) in w.iter().enumerate() {
        loss += 0.5 * l2 * wi * wi;
        grad[i] += l2 * wi;
    }
    loss
}

pub(crate) fn train(p: &LogisticParams, data: &LabeledDataset) -> (LogisticModel, TrainingInfo, Vec<f64>) {
    let scaler = Standardizer::fit(data.matrix.rows());
    let x = scaler.transform_rows(data.matrix.rows());
    let k = data.n_classes();
    let d = data.matrix.dim();
    let result = lbfgs(
        |theta, g| objective(theta, g, &x, &data.labels, k, p.l2),
        vec![0.0; k * d + k],
        p.max_iter,
        p.tol,
        10,
    );
    let (weights, bias) = result.x.split_at(k * d);
    let model = LogisticModel {
        scaler,
        weights: weights.to_vec(),
        bias: bias.to_vec(),
    };
    let info = TrainingInfo {
        rows: data.len(),
        iterations: result.iterations,
        converged: result.converged,
        diagnostics: result.note.into_iter().collect(),
    };
    (model, info, result.history)
}

pub(crate) fn fit(p: &LogisticParams, data: &LabeledDataset) -> (LogisticModel, TrainingInfo) {
    let (m, info, _) = train(p, data);
    (m, info)
}

impl LogisticModel {
    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let q = self.scaler.transform(x);
        let d = q.len();
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.bias[c] + self.weights[c * d..(c + 1) * d].iter().zip(&q).map(|(a, v)| a * v).sum::<f64>();
        }
        softmax_in_place(out);
    }
}
