//! One-vs-rest C-SVC with an RBF kernel. The dual is solved by SMO with
//! second-order working-set selection over a precomputed kernel matrix;
//! decision values are mapped to probabilities with Platt sigmoids fitted on a
//! held-out fifth of the data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Standardizer, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// RBF width; `None` means `1 / D`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Share of rows held out for fitting the Platt sigmoids.
    pub calibration_fraction: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 1_000_000,
            calibration_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    /// `(support vector index, y * alpha)` pairs.
    pub coef: Vec<(usize, f64)>,
    pub rho: f64,
    /// Platt sigmoid `1 / (1 + exp(a * f + b))`.
    pub platt_a: f64,
    pub platt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub scaler: Standardizer,
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// One machine per class, in class-list order.
    pub machines: Vec<BinaryMachine>,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
}

const TAU: f64 = 1e-12;

/// Solves the C-SVC dual on `rows` of the full kernel matrix `k` (`n x n`,
/// row-major), with labels `y` in {+1, -1} per entry of `rows`.
fn smo(k: &[f64], n: usize, rows: &[usize], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Solution {
    let l = rows.len();
    let kk = |a: usize, b: usize| k[rows[a] * n + rows[b]];
    let mut alpha = vec![0.0; l];
    let mut g = vec![-1.0; l];
    let mut iterations = 0;
    let mut converged = false;
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            let up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if up && -y[t] * g[t] > gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..l {
                let low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !low {
                    continue;
                }
                let v = -y[t] * g[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = kk(i, i) + kk(t, t) - 2.0 * kk(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let qij = y[i] * y[j] * kk(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kk(i, i) + kk(j, j) + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kk(i, i) + kk(j, j) - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            g[t] += y[t] * (y[i] * kk(i, t) * di + y[j] * kk(j, t) * dj);
        }
    }

    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..l {
        let yg = y[t] * g[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Solution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

/// Newton fit of a Platt sigmoid with regularized targets.
pub(crate) fn platt(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum::<f64>()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

fn sigmoid_prob(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Stratified holdout: the last `ceil(fraction * count)` rows of each
/// shuffled class, kept only when the class has at least two rows.
fn calibration_split(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == c).collect();
        rows.shuffle(&mut rng);
        let h = if rows.len() >= 2 {
            ((fraction * rows.len() as f64).ceil() as usize).min(rows.len() - 1)
        } else {
            0
        };
        let split = rows.len() - h;
        train.extend_from_slice(&rows[..split]);
        hold.extend_from_slice(&rows[split..]);
    }
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

fn decision(k: &[f64], n: usize, rows: &[usize], sol: &Solution, y: &[f64], at: usize) -> f64 {
    rows.iter()
        .enumerate()
        .filter(|(t, _)| sol.alpha[*t] > 0.0)
        .map(|(t, &r)| y[t] * sol.alpha[t] * k[r * n + at])
        .sum::<f64>()
        - sol.rho
}

pub(crate) fn fit(p: &SvmParams, data: &LabeledDataset, seed: u64) -> (SvmModel, TrainingInfo) {
    let n = data.len();
    let dim = data.matrix.dim();
    let gamma = p.gamma.unwrap_or(1.0 / dim as f64);
    let scaler = Standardizer::fit(data.matrix.rows());
    let x = scaler.transform_rows(data.matrix.rows());
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let n_classes = data.n_classes();
    let (cal_train, cal_hold) = calibration_split(&data.labels, n_classes, p.calibration_fraction, seed);
    let all: Vec<usize> = (0..n).collect();
    let mut diagnostics = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    let mut solve = |rows: &[usize], c: usize, diagnostics: &mut Vec<String>| {
        let y: Vec<f64> = rows.iter().map(|&r| if data.labels[r] == c { 1.0 } else { -1.0 }).collect();
        let has_pos = y.iter().any(|&v| v > 0.0);
        let has_neg = y.iter().any(|&v| v < 0.0);
        if !(has_pos && has_neg) {
            // a single-sided problem has a constant decision
            let rho = if has_pos { -1.0 } else { 1.0 };
            return (
                Solution {
                    alpha: vec![0.0; rows.len()],
                    rho,
                    iterations: 0,
                    converged: true,
                },
                y,
            );
        }
        let sol = smo(&k, n, rows, &y, p.c, p.tol, p.max_iter);
        iterations += sol.iterations;
        if !sol.converged {
            converged = false;
            diagnostics.push(format!("class {c}: SMO hit {} iterations", p.max_iter));
        }
        (sol, y)
    };

    let mut machines = Vec::with_capacity(n_classes);
    let mut sv_index = vec![usize::MAX; n];
    let mut support_vectors = Vec::new();
    for c in 0..n_classes {
        let (cal_sol, cal_y) = solve(&cal_train, c, &mut diagnostics);
        let (cal_rows, cal_decisions): (Vec<usize>, Vec<f64>) = if cal_hold.iter().any(|&r| data.labels[r] == c)
            && cal_hold.iter().any(|&r| data.labels[r] != c)
        {
            (
                cal_hold.clone(),
                cal_hold.iter().map(|&r| decision(&k, n, &cal_train, &cal_sol, &cal_y, r)).collect(),
            )
        } else {
            (
                cal_train.clone(),
                cal_train.iter().map(|&r| decision(&k, n, &cal_train, &cal_sol, &cal_y, r)).collect(),
            )
        };
        let positive: Vec<bool> = cal_rows.iter().map(|&r| data.labels[r] == c).collect();
        let (platt_a, platt_b) = platt(&cal_decisions, &positive);

        let (sol, y) = solve(&all, c, &mut diagnostics);
        let mut coef = Vec::new();
        for (t, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                if sv_index[t] == usize::MAX {
                    sv_index[t] = support_vectors.len();
                    support_vectors.push(x[t].clone());
                }
                coef.push((sv_index[t], y[t] * a));
            }
        }
        machines.push(BinaryMachine {
            coef,
            rho: sol.rho,
            platt_a,
            platt_b,
        });
    }
    let model = SvmModel {
        scaler,
        gamma,
        support_vectors,
        machines,
    };
    let info = TrainingInfo {
        rows: n,
        iterations,
        converged,
        diagnostics,
    };
    (model, info)
}

impl SvmModel {
    /// Raw one-vs-rest decision values, one per class.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let q = self.scaler.transform(x);
        let kernel: Vec<f64> = self.support_vectors.iter().map(|sv| rbf(sv, &q, self.gamma)).collect();
        self.machines
            .iter()
            .map(|m| m.coef.iter().map(|&(i, a)| a * kernel[i]).sum::<f64>() - m.rho)
            .collect()
    }

    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, f), m) in out.iter_mut().zip(self.decision_values(x)).zip(&self.machines) {
            *o = sigmoid_prob(f, m.platt_a, m.platt_b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_problem_has_symmetric_margin() {
        // Points at -1 and +1 on a line with a linear-ish kernel: the dual
        // solution puts equal weight on both and the bias at zero.
        let k = vec![1.0, 0.2, 0.2, 1.0];
        let sol = smo(&k, 2, &[0, 1], &[1.0, -1.0], 10.0, 1e-6, 1000);
        assert!(sol.converged);
        assert!((sol.alpha[0] - sol.alpha[1]).abs() < 1e-9);
        // margin condition: f(x0) = 1 with f = a*(K00 - K01) - rho
        let f0 = sol.alpha[0] * (1.0 - 0.2) - sol.rho;
        assert!((f0 - 1.0).abs() < 1e-6, "{f0}");
        assert!(sol.rho.abs() < 1e-9);
    }

    #[test]
    fn platt_orders_probabilities_with_decisions() {
        let dec = [-2.0, -1.5, -0.5, 0.3, 1.0, 2.0, -0.2, 0.8];
        let pos = [false, false, false, true, true, true, false, true];
        let (a, b) = platt(&dec, &pos);
        assert!(a < 0.0);
        assert!(sigmoid_prob(2.0, a, b) > 0.5 && sigmoid_prob(-2.0, a, b) < 0.5);
    }

    #[test]
    fn calibration_split_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let (train, hold) = calibration_split(&labels, 2, 0.2, 1);
        assert_eq!(hold.len(), 10);
        assert_eq!(train.len() + hold.len(), 50);
        assert_eq!(hold.iter().filter(|&&r| labels[r] == 0).count(), 5);
    }
}
