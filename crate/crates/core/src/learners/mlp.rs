use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, LabeledDataset, Standardizer, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    /// L2 penalty `alpha / (2 * batch) * ||W||^2` added to the mean cross-entropy.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Minimum epoch-loss improvement that resets the patience counter.
    pub tol: f64,
    pub n_iter_no_change: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 100,
            alpha: 1e-4,
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 200,
            tol: 1e-4,
            n_iter_no_change: 10,
        }
    }
}

/// One hidden ReLU layer and a softmax output. Weight matrices are row-major
/// with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub scaler: Standardizer,
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Same shapes as the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradient {
    fn zeros(m: &MlpModel) -> Self {
        Self {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }
}

impl MlpModel {
    /// Seeded network with an identity input scaler. Weights are uniform in
    /// `±sqrt(6 / fan_in)`, biases start at zero.
    pub fn random(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, len: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f64>>()
        };
        let w1 = layer(inputs, hidden * inputs);
        let w2 = layer(hidden, outputs * hidden);
        Self {
            scaler: Standardizer {
                mean: vec![0.0; inputs],
                scale: vec![1.0; inputs],
            },
            inputs,
            hidden,
            outputs,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], h: &mut [f64], out: &mut [f64]) {
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
            let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *hj = z.max(0.0);
        }
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            *o = self.b2[c] + row.iter().zip(h.iter()).map(|(w, v)| w * v).sum::<f64>();
        }
        softmax_in_place(out);
    }

    /// Loss on already-scaled rows; accumulates into `g` (which must be zeroed).
    fn batch_loss(&self, xs: &[&[f64]], ys: &[usize], alpha: f64, g: &mut MlpGradient) -> f64 {
        let n = xs.len() as f64;
        let mut h = vec![0.0; self.hidden];
        let mut p = vec![0.0; self.outputs];
        let mut dh = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.forward(x, &mut h, &mut p);
            loss -= p[y].max(1e-300).ln();
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..self.outputs {
                let d = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
                g.b2[c] += d;
                let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
                let grow = &mut g.w2[c * self.hidden..(c + 1) * self.hidden];
                for j in 0..self.hidden {
                    grow[j] += d * h[j];
                    dh[j] += d * row[j];
                }
            }
            for j in 0..self.hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += dh[j];
                let grow = &mut g.w1[j * self.inputs..(j + 1) * self.inputs];
                for (gw, v) in grow.iter_mut().zip(x.iter()) {
                    *gw += dh[j] * v;
                }
            }
        }
        let mut sq = 0.0;
        for (w, gw) in self.w1.iter().zip(g.w1.iter_mut()).chain(self.w2.iter().zip(g.w2.iter_mut())) {
            sq += w * w;
            *gw += alpha * w / n;
        }
        loss / n + alpha * sq / (2.0 * n)
    }

    /// Mean cross-entropy plus `alpha / (2n) * ||W||^2` over `x` (raw features,
    /// scaled by the model's standardizer) and its gradient.
    pub fn loss_and_gradient(&self, x: &[Vec<f64>], y: &[usize], alpha: f64) -> (f64, MlpGradient) {
        let scaled = self.scaler.transform_rows(x);
        let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let mut g = MlpGradient::zeros(self);
        let loss = self.batch_loss(&refs, y, alpha, &mut g);
        (loss, g)
    }

    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let q = self.scaler.transform(x);
        let mut h = vec![0.0; self.hidden];
        self.forward(&q, &mut h, out);
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [&mut Vec<f64>; 4], grads: [&Vec<f64>; 4], lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - Self::BETA2.powi(self.t)).sqrt() / (1.0 - Self::BETA1.powi(self.t));
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, gi) in p.iter_mut().zip(g) {
                self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * gi;
                self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * gi * gi;
                *w -= lr_t * self.m[k] / (self.v[k].sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

pub(crate) fn fit(p: &MlpParams, data: &LabeledDataset, seed: u64) -> (MlpModel, TrainingInfo) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::random(data.matrix.dim(), p.hidden, data.n_classes(), rng.random());
    model.scaler = Standardizer::fit(data.matrix.rows());
    let x = model.scaler.transform_rows(data.matrix.rows());
    let n = x.len();
    let batch = p.batch_size.clamp(1, n);
    let total = model.w1.len() + model.b1.len() + model.w2.len() + model.b2.len();
    let mut adam = Adam {
        m: vec![0.0; total],
        v: vec![0.0; total],
        t: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < p.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let mut g = MlpGradient::zeros(&model);
            epoch_loss += model.batch_loss(&xs, &ys, p.alpha, &mut g) * chunk.len() as f64;
            let MlpModel { w1, b1, w2, b2, .. } = &mut model;
            adam.step(&mut [w1, b1, w2, b2], [&g.w1, &g.b1, &g.w2, &g.b2], p.learning_rate);
        }
        epochs += 1;
        let loss = epoch_loss / n as f64;
        if loss > best - p.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(loss);
        if stale > p.n_iter_no_change {
            converged = true;
            break;
        }
    }
    let diagnostics = if converged {
        Vec::new()
    } else {
        vec![format!("reached {epochs} epochs with loss {best:.6} still improving")]
    };
    let info = TrainingInfo {
        rows: n,
        iterations: epochs,
        converged,
        diagnostics,
    };
    (model, info)
}
