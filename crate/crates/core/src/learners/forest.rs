use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, TreeModel, TreeParams};
use super::{LabeledDataset, TrainingInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features examined per split; `None` means `ceil(sqrt(D))`.
    pub max_features: Option<usize>,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        let t = TreeParams::default();
        Self {
            n_trees: 10,
            bootstrap: true,
            max_features: None,
            max_depth: t.max_depth,
            min_samples_split: t.min_samples_split,
            min_samples_leaf: t.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
}

pub(crate) fn fit(p: &ForestParams, data: &LabeledDataset, seed: u64) -> (ForestModel, TrainingInfo) {
    let n = data.len();
    let dim = data.matrix.dim();
    let tree_params = TreeParams {
        max_depth: p.max_depth,
        min_samples_split: p.min_samples_split,
        min_samples_leaf: p.min_samples_leaf,
        max_features: Some(p.max_features.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<(u64, Vec<usize>)> = (0..p.n_trees)
        .map(|_| {
            let tree_seed = rng.random::<u64>();
            let rows = if p.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            (tree_seed, rows)
        })
        .collect();
    let trees = plans
        .into_iter()
        .map(|(s, rows)| grow(data.matrix.rows(), &data.labels, data.n_classes(), rows, &tree_params, s))
        .collect();
    let info = TrainingInfo {
        rows: n,
        iterations: p.n_trees,
        converged: true,
        diagnostics: Vec::new(),
    };
    (ForestModel { trees }, info)
}

impl ForestModel {
    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.leaf_probs(x)) {
                *o += p;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
    }
}
