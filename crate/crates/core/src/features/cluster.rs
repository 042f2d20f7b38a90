//! Cosine distance and average-linkage agglomerative clustering.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} features", u.len()),
            actual: format!("{} features", v.len()),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    // a single sqrt keeps d(v, v) and d(v, 2v) exactly zero
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `t` has id `n + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub linkage: String,
    pub metric: String,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.n_leaves + self.merges.len() - 1
        }
    }

    fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.n_leaves).then(|| {
            let m = &self.merges[node - self.n_leaves];
            (m.a, m.b)
        })
    }

    pub fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves {
            0.0
        } else {
            self.merges[node - self.n_leaves].height
        }
    }

    fn leaves_under(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.children(n) {
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
                None => out.push(n),
            }
        }
    }

    /// Splits the tree `depth` levels below the root; leaves reached early stay
    /// as singleton clusters. Cluster ids are numbered by smallest member row.
    pub fn cut_at_depth(&self, depth: usize) -> Vec<usize> {
        let mut frontier = vec![self.root()];
        for _ in 0..depth {
            frontier = frontier
                .into_iter()
                .flat_map(|n| match self.children(n) {
                    Some((a, b)) => vec![a, b],
                    None => vec![n],
                })
                .collect();
        }
        let mut groups: Vec<Vec<usize>> = frontier
            .into_iter()
            .map(|n| {
                let mut leaves = Vec::new();
                self.leaves_under(n, &mut leaves);
                leaves.sort_unstable();
                leaves
            })
            .collect();
        groups.sort_by_key(|g| g[0]);
        let mut assign = vec![0usize; self.n_leaves];
        for (c, g) in groups.iter().enumerate() {
            for &leaf in g {
                assign[leaf] = c;
            }
        }
        assign
    }
}

/// Average-linkage clustering of matrix rows under cosine distance. Equal
/// distances merge the pair with the smallest row indices first.
pub fn hclust(m: &FeatureMatrix) -> Result<Dendrogram> {
    let n = m.len();
    if n < 2 {
        return Err(Error::DegenerateData("clustering needs at least two rows".into()));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(m.row(i), m.row(j))?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // Slot i holds the cluster whose smallest leaf is i; merging keeps the lower slot.
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node_id: Vec<usize> = (0..n).collect();
    let mut node_height = vec![0.0f64; n];
    // nearest active slot above i, for the lexicographic (d, i, j) minimum
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];

    let refresh = |i: usize, active: &[bool], dist: &[f64], nn: &mut [usize], nn_d: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_d[i] = f64::INFINITY;
        for j in i + 1..n {
            if active[j] && dist[i * n + j] < nn_d[i] {
                nn_d[i] = dist[i * n + j];
                nn[i] = j;
            }
        }
    };
    for i in 0..n {
        refresh(i, &active, &dist, &mut nn, &mut nn_d);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX);
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && nn_d[i] < best.0 {
                best = (nn_d[i], i);
            }
        }
        let (d, i) = best;
        let j = nn[i];

        let height = d.max(node_height[i]).max(node_height[j]);
        merges.push(Merge {
            a: node_id[i],
            b: node_id[j],
            height,
            size: size[i] + size[j],
        });

        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let nd = (si * dist[i * n + k] + sj * dist[j * n + k]) / (si + sj);
                dist[i * n + k] = nd;
                dist[k * n + i] = nd;
            }
        }
        active[j] = false;
        size[i] += size[j];
        node_id[i] = n + step;
        node_height[i] = height;

        refresh(i, &active, &dist, &mut nn, &mut nn_d);
        for k in 0..i {
            if !active[k] {
                continue;
            }
            if nn[k] == i || nn[k] == j {
                refresh(k, &active, &dist, &mut nn, &mut nn_d);
            } else if dist[k * n + i] < nn_d[k] || (dist[k * n + i] == nn_d[k] && i < nn[k]) {
                nn_d[k] = dist[k * n + i];
                nn[k] = i;
            }
        }
        for k in i + 1..n {
            if active[k] && nn[k] == j {
                refresh(k, &active, &dist, &mut nn, &mut nn_d);
            }
        }
    }

    Ok(Dendrogram {
        n_leaves: n,
        linkage: "average".into(),
        metric: "cosine".into(),
        merges,
    })
}
