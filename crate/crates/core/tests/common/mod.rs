#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vegmap_core::features::FeatureMatrix;
use vegmap_core::learners::LabeledDataset;
use vegmap_core::tiling::TileSpec;

pub fn matrix(layout: &str, rows: &[Vec<f64>]) -> FeatureMatrix {
    let dim = rows.first().map_or(0, Vec::len);
    let mut m = FeatureMatrix::new(layout, dim);
    for (i, r) in rows.iter().enumerate() {
        m.push(TileSpec::new("t", i as u32, 0, 1), r.clone()).unwrap();
    }
    m
}

/// Gaussian-ish clusters around well separated class centers.
pub fn blobs(seed: u64, per_class: usize, k: usize, dim: usize, spread: f64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * k {
        let c = i % k;
        rows.push(centers[c].iter().map(|v| v + rng.random_range(-spread..spread)).collect());
        labels.push(c);
    }
    LabeledDataset::new(matrix("test", &rows), labels, (0..k).map(|c| format!("class{c}")).collect()).unwrap()
}
