mod common;

use common::matrix;
use proptest::prelude::*;
use vegmap_core::features::{
    cosine_distance, embed_baseline, embed_tiles, hclust, nearest_neighbors, rank_features, BaselineEmbedder,
    FeatureMatrix, BASELINE_DIM, BASELINE_LAYOUT,
};
use vegmap_core::imaging::RgbImage;
use vegmap_core::tiling::{crop_tile, grid_tiles};

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

#[test]
fn embed_tiles_agrees_with_single_tile_embedding() {
    let img = RgbImage::from_fn(96, 64, |x, y| [(x * 3) as u8, (y * 4) as u8, ((x + y) % 256) as u8]).unwrap();
    let tiles = grid_tiles("a", 96, 64, 32, 2).unwrap();
    let images = [("a".to_string(), img.clone())].into_iter().collect();
    let m = embed_tiles(&BaselineEmbedder, &images, &tiles).unwrap();
    assert_eq!(m.layout_id(), BASELINE_LAYOUT);
    assert_eq!(m.dim(), BASELINE_DIM);
    for (i, t) in tiles.iter().enumerate() {
        let v = embed_baseline(&crop_tile(&img, t).unwrap()).unwrap();
        assert_eq!(v.values.as_slice(), m.row(i));
    }
}

#[test]
fn csv_round_trip_keeps_rows_and_keys() {
    let m = matrix("ext", &[vec![1.0, 2.5], vec![-3.0, 0.125]]);
    let back = FeatureMatrix::read_csv(m.to_csv().as_slice(), Some("ext")).unwrap();
    assert_eq!(back, m);
}

proptest! {
    #[test]
    fn cosine_symmetry_identity_and_scale(u in vec_strategy(6), v in vec_strategy(6), a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let d = cosine_distance(&u, &v).unwrap();
        prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() < 1e-12);
        prop_assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-12);
        let au: Vec<f64> = u.iter().map(|x| a * x).collect();
        let bv: Vec<f64> = v.iter().map(|x| b * x).collect();
        prop_assert!((cosine_distance(&au, &bv).unwrap() - d).abs() < 1e-9);
        prop_assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn rank_order_survives_positive_affine_maps(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 12),
        scales in prop::collection::vec(0.1f64..10.0, 4),
        shifts in prop::collection::vec(-100.0f64..100.0, 4),
    ) {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let a = rank_features(&matrix("t", &rows), &labels).unwrap();
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(f, v)| scales[f] * v + shifts[f]).collect())
            .collect();
        let b = rank_features(&matrix("t", &moved), &labels).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
        }
        // near-equal scores may swap under rounding; compare only clear gaps
        for w in b.order.windows(2) {
            prop_assert!(a.scores[w[0]] >= a.scores[w[1]] - 1e-6 * a.scores[w[0]].abs().max(1.0));
        }
    }

    #[test]
    fn cuts_partition_rows(rows in prop::collection::vec(vec_strategy(3), 2..16), depth in 0usize..5) {
        let d = hclust(&matrix("t", &rows)).unwrap();
        prop_assert_eq!(d.merges.len(), rows.len() - 1);
        let assign = d.cut_at_depth(depth);
        prop_assert_eq!(assign.len(), rows.len());
        let k = assign.iter().max().unwrap() + 1;
        prop_assert!(k <= 1 << depth);
        for c in 0..k {
            prop_assert!(assign.contains(&c));
        }
        for w in d.merges.windows(2) {
            prop_assert!(w[1].height >= w[0].height - 1e-12);
        }
    }

    #[test]
    fn neighbours_come_back_sorted(pool in prop::collection::vec(vec_strategy(3), 1..20), seed in vec_strategy(3), k in 1usize..25) {
        let seeds = matrix("t", &[seed]);
        let pool = matrix("t", &pool);
        let r = nearest_neighbors(&seeds, &pool, k).unwrap();
        prop_assert_eq!(r.len(), k.min(pool.len()));
        for w in r.windows(2) {
            prop_assert!(w[0].distance <= w[1].distance);
        }
    }
}
