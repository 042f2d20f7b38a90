use serde::{Deserialize, Serialize};

use super::{cosine_distance, FeatureMatrix};
use crate::error::{Error, Result};
use crate::tiling::TileSpec;

/// A pool tile suggested as similar to one of the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub tile: TileSpec,
    pub distance: f64,
    /// The seed tile at minimum distance.
    pub seed: TileSpec,
}

/// Ranks pool rows by their smallest cosine distance to any seed and keeps the
/// best `k`. Ties fall back to tile-key order.
pub fn nearest_neighbors(seeds: &FeatureMatrix, pool: &FeatureMatrix, k: usize) -> Result<Vec<Neighbor>> {
    if seeds.layout_id() != pool.layout_id() {
        return Err(Error::LayoutMismatch {
            expected: seeds.layout_id().to_string(),
            actual: pool.layout_id().to_string(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed row is required"));
    }
    let mut ranked = Vec::with_capacity(pool.len());
    for (pk, prow) in pool.keys().iter().zip(pool.rows()) {
        let mut best = (f64::INFINITY, 0usize);
        for (si, srow) in seeds.rows().iter().enumerate() {
            let d = cosine_distance(srow, prow)?;
            if d < best.0 {
                best = (d, si);
            }
        }
        ranked.push(Neighbor {
            tile: pk.clone(),
            distance: best.0,
            seed: seeds.key(best.1).clone(),
        });
    }
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.tile.cmp(&b.tile)));
    ranked.truncate(k);
    Ok(ranked)
}
