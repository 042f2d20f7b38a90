mod common;

use common::{blobs, matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vegmap_core::features::FeatureVector;
use vegmap_core::learners::{
    auc, binary_auc, ca, confusion, cross_validate, fit, focus_coverage, loo_validate, predicted_classes,
    stratified_folds, ForestParams, KnnParams, LabeledDataset, LearnerConfig, LearnerKind, LearnerParams, Model,
    TreeParams,
};

fn pair_count_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Prevalence-weighted one-vs-rest AUC from pair counts.
fn multiclass_pair_auc(probs: &[Vec<f64>], actual: &[usize], k: usize) -> f64 {
    let n = actual.len() as f64;
    (0..k)
        .filter(|c| actual.contains(c))
        .map(|c| {
            let pos: Vec<bool> = actual.iter().map(|&a| a == c).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            pos.iter().filter(|&&p| p).count() as f64 / n * pair_count_auc(&scores, &pos)
        })
        .sum()
}

fn train(kind: LearnerKind, data: &LabeledDataset, seed: u64) -> Model {
    fit(&LearnerConfig::new(kind, seed), data).unwrap()
}

#[test]
fn every_learner_gives_distributions_and_is_deterministic() {
    let data = blobs(1, 15, 3, 4, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let queries: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(-30.0..30.0)).collect()).collect();
    for kind in LearnerKind::ALL {
        let a = train(kind, &data, 7);
        let b = train(kind, &data, 7);
        assert_eq!(a, b, "{kind}");
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for q in &queries {
            let p = a.proba_values(q).unwrap();
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|v| *v >= 0.0), "{kind}: {p:?}");
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{kind}: {p:?}");
        }
        let round = Model::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(round.proba_values(&queries[0]).unwrap(), a.proba_values(&queries[0]).unwrap());
    }
}

#[test]
fn separable_training_sets_are_learned() {
    let data = blobs(2, 20, 2, 3, 1.0);
    let lr = train(LearnerKind::LogisticRegression, &data, 0);
    let pred = predicted_classes(&lr.predict_matrix(&data.matrix).unwrap());
    assert_eq!(ca(&data.labels, &pred), 1.0);

    let cfg = LearnerConfig {
        params: LearnerParams::Knn(KnnParams { k: 1, standardize: true }),
        seed: 0,
    };
    let noisy = blobs(3, 20, 3, 3, 12.0);
    let knn = fit(&cfg, &noisy).unwrap();
    let pred = predicted_classes(&knn.predict_matrix(&noisy.matrix).unwrap());
    assert_eq!(ca(&noisy.labels, &pred), 1.0);
}

#[test]
fn layout_mismatch_is_refused() {
    let data = blobs(2, 10, 2, 3, 1.0);
    let m = train(LearnerKind::Knn, &data, 0);
    let v = FeatureVector::new("other", vec![0.0; 3]).unwrap();
    assert!(m.predict_proba(&v).is_err());
}

#[test]
fn degenerate_data_is_refused() {
    let one_class = LabeledDataset::new(matrix("t", &[vec![1.0], vec![2.0]]), vec![0, 0], vec!["a".into(), "b".into()]).unwrap();
    for kind in LearnerKind::ALL {
        assert!(fit(&LearnerConfig::new(kind, 0), &one_class).is_err());
    }
    let bad = LearnerConfig {
        params: LearnerParams::Knn(KnnParams { k: 0, standardize: true }),
        seed: 0,
    };
    assert!(fit(&bad, &blobs(1, 5, 2, 2, 1.0)).is_err());
}

#[test]
fn single_unbagged_forest_tree_equals_tree() {
    let data = blobs(4, 25, 3, 5, 9.0);
    let dim = data.matrix.dim();
    let tree = fit(
        &LearnerConfig {
            params: LearnerParams::Tree(TreeParams::default()),
            seed: 3,
        },
        &data,
    )
    .unwrap();
    let forest = fit(
        &LearnerConfig {
            params: LearnerParams::RandomForest(ForestParams {
                n_trees: 1,
                bootstrap: false,
                max_features: Some(dim),
                ..ForestParams::default()
            }),
            seed: 3,
        },
        &data,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-20.0..20.0)).collect();
        assert_eq!(tree.proba_values(&q).unwrap(), forest.proba_values(&q).unwrap());
    }
}

#[test]
fn separable_four_class_cv() {
    // one class per axis, tight clusters
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..800 {
        let c = i % 4;
        rows.push((0..4).map(|d| if d == c { 10.0 } else { 0.0 } + rng.random_range(-0.05..0.05)).collect());
        labels.push(c);
    }
    let names = (0..4).map(|c| format!("class{c}")).collect();
    let data = LabeledDataset::new(matrix("t", &rows), labels, names).unwrap();
    let report = cross_validate(&[LearnerConfig::new(LearnerKind::LogisticRegression, 0)], &data, 3, 11).unwrap();
    let m = report.rows[0].metrics;
    assert_eq!(m.ca, 1.0);
    assert_eq!(m.auc, 1.0);
    assert!(m.logloss < 0.01, "{}", m.logloss);
}

#[test]
fn cv_rows_follow_config_order_and_failures_stay_local() {
    let data = blobs(6, 9, 2, 2, 1.0);
    let bad = LearnerConfig {
        params: LearnerParams::Knn(KnnParams { k: 0, standardize: true }),
        seed: 0,
    };
    let cfgs = [LearnerConfig::new(LearnerKind::Tree, 0), bad, LearnerConfig::new(LearnerKind::Knn, 0)];
    let report = cross_validate(&cfgs, &data, 3, 2).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["Tree", "kNN", "kNN"]);
    assert!(report.rows[1].error.is_some());
    assert!(report.rows[0].error.is_none() && report.rows[2].error.is_none());
    let csv = report.to_csv(false).unwrap();
    assert!(csv.starts_with("dataset,images,model,train_time,test_time,auc,ca,f1,precision,recall,logloss,specificity,error\n"));
    assert_eq!(csv, report.to_csv(false).unwrap());
}

#[test]
fn loo_trains_on_all_but_one() {
    let data = blobs(7, 35, 4, 3, 0.5);
    assert_eq!(data.len(), 140);
    let cfg = LearnerConfig::new(LearnerKind::Knn, 0);
    let records = loo_validate(&cfg, &data, 0.1, 3).unwrap();
    assert_eq!(records.len(), 14);
    for r in &records {
        assert_eq!(r.train_rows, 139);
        assert_eq!(r.actual, r.predicted);
    }
    let all = loo_validate(&cfg, &blobs(8, 5, 2, 2, 0.5), 1.0, 0).unwrap();
    assert_eq!(all.len(), 10);
    assert!(loo_validate(&cfg, &data, 0.0, 0).is_err());
}

#[test]
fn coverage_union_of_disjoint_sets() {
    // model A accepts rows near (1, 0), model B rows near (0, 1); the rest sit at (-1, -1)
    let data = LabeledDataset::new(
        matrix("t", &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]),
        vec![0, 1, 2],
        vec!["focus".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let knn1 = LearnerConfig {
        params: LearnerParams::Knn(KnnParams { k: 1, standardize: false }),
        seed: 0,
    };
    let a = fit(&knn1, &data).unwrap();
    let swapped = LabeledDataset::new(data.matrix.clone(), vec![1, 0, 2], data.class_list.clone()).unwrap();
    let b = fit(&knn1, &swapped).unwrap();
    let mut rows = vec![vec![1.0, 0.1]; 3];
    rows.extend(vec![vec![0.1, 1.0]; 4]);
    rows.extend(vec![vec![-1.0, -0.9]; 3]);
    let tiles = matrix("t", &rows);
    let r = focus_coverage(&[a, b], &tiles, "focus", &[0.5, 0.5]).unwrap();
    assert_eq!(r.per_model[0].rows, vec![0, 1, 2]);
    assert_eq!(r.per_model[1].rows, vec![3, 4, 5, 6]);
    assert_eq!(r.union.len(), 7);
    assert!((r.fraction - 0.7).abs() < 1e-12);
}

#[test]
fn coverage_union_matches_set_oracle() {
    let data = blobs(9, 20, 3, 3, 6.0);
    let models: Vec<Model> = [LearnerKind::Knn, LearnerKind::Tree, LearnerKind::LogisticRegression]
        .into_iter()
        .map(|k| train(k, &data, 1))
        .collect();
    let thresholds = [0.5, 0.4, 0.51];
    let r = focus_coverage(&models, &data.matrix, "class1", &thresholds).unwrap();
    let mut expected = std::collections::BTreeSet::new();
    for (m, t) in models.iter().zip(thresholds) {
        for (i, p) in m.predict_matrix(&data.matrix).unwrap().iter().enumerate() {
            if p[1] > t {
                expected.insert(i);
            }
        }
    }
    assert_eq!(r.union, expected.into_iter().collect::<Vec<_>>());
}

#[test]
fn uniform_random_scores_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
    let pos: Vec<bool> = (0..20_000).map(|_| rng.random()).collect();
    assert!((binary_auc(&scores, &pos) - 0.5).abs() < 0.05);
}

proptest! {
    #[test]
    fn multiclass_auc_matches_pair_counting(seed in 0u64..10_000, n in 2usize..50, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actual: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| (rng.random_range(0..6) as f64) + 0.5).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let got = auc(&probs, &actual, k);
        let present = (0..k).filter(|c| actual.contains(c)).count();
        if present < 2 {
            prop_assert!(got.is_nan());
        } else {
            prop_assert!((got - multiclass_pair_auc(&probs, &actual, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms(scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<bool> = scores.iter().map(|_| rng.random()).collect();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let moved: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() * 3.0 + 1.0).collect();
        prop_assert!((binary_auc(&scores, &pos) - binary_auc(&moved, &pos)).abs() < 1e-12);
    }

    #[test]
    fn confusion_percentages_and_ca(seed in 0u64..10_000, n in 1usize..80, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actual: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let m = confusion(&actual, &predicted, &names).unwrap();
        for a in 0..k {
            let col: usize = (0..k).map(|p| m.counts[p][a]).sum();
            let brute = actual.iter().filter(|&&x| x == a).count();
            prop_assert_eq!(col, brute);
            if col > 0 {
                let pct: f64 = (0..k).map(|p| m.percent[p][a]).sum();
                prop_assert!((pct - 100.0).abs() < 0.1);
                for p in 0..k {
                    let cnt = actual.iter().zip(&predicted).filter(|(x, y)| **x == a && **y == p).count();
                    prop_assert!((m.percent[p][a] - cnt as f64 / col as f64 * 100.0).abs() < 1e-9);
                }
            }
        }
        prop_assert!((m.ca() - ca(&actual, &predicted)).abs() < 1e-12);
    }

    #[test]
    fn folds_are_balanced(seed in 0u64..10_000, k in 2usize..6, sizes in prop::collection::vec(0usize..30, 1..5)) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n + k)).collect();
        let folds = stratified_folds(&labels, k, seed).unwrap();
        let n_classes = sizes.len();
        for c in 0..n_classes {
            let total = labels.iter().filter(|&&l| l == c).count();
            for f in 0..k {
                let got = (0..labels.len()).filter(|&r| labels[r] == c && folds[r] == f).count() as f64;
                prop_assert!((got - total as f64 / k as f64).abs() < 1.0 + 1e-9);
            }
        }
        let sizes: Vec<usize> = (0..k).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn probabilities_are_valid_for_random_data(seed in 0u64..1000, kind_index in 0usize..6) {
        let data = blobs(seed, 8, 3, 3, 15.0);
        let model = train(LearnerKind::ALL[kind_index], &data, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-40.0..40.0)).collect();
            let p = model.proba_values(&q).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
