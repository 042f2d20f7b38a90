use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Nodes with fewer rows become leaves.
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 100,
            min_samples_split: 5,
            min_samples_leaf: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Laplace-smoothed class frequencies.
    Leaf { probs: Vec<f64> },
}

/// Gini classification tree stored as a flat node list rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<Node>,
}

pub(crate) fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best Gini-gain split of `rows` over `features`. Candidate thresholds are
/// midpoints between consecutive distinct values; the first feature and the
/// lowest threshold win ties.
pub(crate) fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = rows.len();
    let mut total = vec![0usize; n_classes];
    for &r in rows {
        total[y[r]] += 1;
    }
    let parent = gini(&total, n);
    let mut best: Option<Split> = None;
    let mut order = rows.to_vec();
    let mut left = vec![0usize; n_classes];
    let mut right = vec![0usize; n_classes];
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&total);
        for i in 0..n - 1 {
            let r = order[i];
            left[y[r]] += 1;
            right[y[r]] -= 1;
            let (a, b) = (x[r][f], x[order[i + 1]][f]);
            let nl = i + 1;
            if a == b || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let weighted = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            let gain = parent - weighted;
            if best.map_or(true, |s| gain > s.gain) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

const MIN_GAIN: f64 = 1e-12;

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    p: &'a TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn features(&mut self) -> Vec<usize> {
        let dim = self.x[0].len();
        match self.p.max_features {
            Some(m) if m < dim => {
                let mut all: Vec<usize> = (0..dim).collect();
                for i in 0..m {
                    let j = self.rng.random_range(i..dim);
                    all.swap(i, j);
                }
                let mut pick = all[..m].to_vec();
                pick.sort_unstable();
                pick
            }
            _ => (0..dim).collect(),
        }
    }

    fn leaf(&self, rows: &[usize]) -> Node {
        let mut counts = vec![0usize; self.n_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        let denom = (rows.len() + self.n_classes) as f64;
        Node::Leaf {
            probs: counts.iter().map(|&c| (c + 1) as f64 / denom).collect(),
        }
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { probs: Vec::new() });
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        let split = if pure || depth >= self.p.max_depth || rows.len() < self.p.min_samples_split.max(2) {
            None
        } else {
            let features = self.features();
            best_split(self.x, self.y, self.n_classes, &rows, &features, self.p.min_samples_leaf.max(1))
                .filter(|s| s.gain > MIN_GAIN)
        };
        match split {
            None => self.nodes[id] = self.leaf(&rows),
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Grows a tree on `rows` (which may repeat, as in a bootstrap sample).
pub(crate) fn grow(x: &[Vec<f64>], y: &[usize], n_classes: usize, rows: Vec<usize>, p: &TreeParams, seed: u64) -> TreeModel {
    let mut b = Builder {
        x,
        y,
        n_classes,
        p,
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    TreeModel { nodes: b.nodes }
}

pub(crate) fn fit(p: &TreeParams, data: &LabeledDataset, seed: u64) -> (TreeModel, TrainingInfo) {
    let model = grow(data.matrix.rows(), &data.labels, data.n_classes(), (0..data.len()).collect(), p, seed);
    let info = TrainingInfo {
        rows: data.len(),
        iterations: model.nodes.len(),
        converged: true,
        diagnostics: Vec::new(),
    };
    (model, info)
}

impl TreeModel {
    pub(crate) fn leaf_probs(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.leaf_probs(x));
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tries every feature and every cut between sorted values, scoring each
    /// by Gini gain from scratch.
    fn exhaustive(x: &[Vec<f64>], y: &[usize], k: usize, min_leaf: usize) -> (usize, f64, f64) {
        let n = x.len();
        let mut best = (usize::MAX, f64::NAN, f64::NEG_INFINITY);
        let impurity = |rows: &[usize]| {
            let mut c = vec![0.0; k];
            for &r in rows {
                c[y[r]] += 1.0;
            }
            let m = rows.len() as f64;
            1.0 - c.iter().map(|v: &f64| (v / m) * (v / m)).sum::<f64>()
        };
        let all: Vec<usize> = (0..n).collect();
        let parent = impurity(&all);
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let g = parent - (l.len() as f64 * impurity(&l) + r.len() as f64 * impurity(&r)) / n as f64;
                if g > best.2 + 1e-12 {
                    best = (f, t, g);
                }
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_search() {
        let x = vec![
            vec![1.0, 7.0],
            vec![2.0, 3.0],
            vec![3.0, 8.0],
            vec![4.0, 1.0],
            vec![5.0, 6.0],
            vec![6.0, 2.0],
            vec![7.0, 5.0],
            vec![8.0, 4.0],
        ];
        let y = vec![0, 1, 0, 1, 0, 1, 1, 1];
        let rows: Vec<usize> = (0..8).collect();
        let s = best_split(&x, &y, 2, &rows, &[0, 1], 2).unwrap();
        let (f, t, g) = exhaustive(&x, &y, 2, 2);
        assert_eq!(s.feature, f);
        assert_eq!(s.threshold, t);
        assert!((s.gain - g).abs() < 1e-12);

        let model = grow(&x, &y, 2, rows, &TreeParams::default(), 0);
        match &model.nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((*feature, *threshold), (f, t)),
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn leaves_are_laplace_smoothed() {
        let x = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let y = vec![0, 0, 0, 1];
        let m = grow(&x, &y, 3, (0..4).collect(), &TreeParams::default(), 0);
        // four rows are below the split minimum, so the root is a leaf
        assert_eq!(m.nodes.len(), 1);
        assert_eq!(m.leaf_probs(&[0.0]), &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]);
    }

    #[test]
    fn depth_limit_holds() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..64).map(|i| (i / 2) % 2).collect();
        let p = TreeParams {
            max_depth: 3,
            ..TreeParams::default()
        };
        assert!(grow(&x, &y, 2, (0..64).collect(), &p, 0).depth() <= 3);
    }
}
