//! Property tests for the invariants the library promises.

mod common;

use proptest::prelude::*;
use ultr_lab::autodiff::{listwise_softmax_cross_entropy, AdaGrad, Matrix};
use ultr_lab::click::{sample_session, ClickLog, PositionBiasCurve, SimulationConfig};
use ultr_lab::data::{parse_svmlight, to_svmlight, Dataset, FeatureVector, LabeledDoc, QueryGroup, Split};
use ultr_lab::metrics::{err_at_k, ndcg_at_k, normalized_propensity};
use ultr_lab::propensity::{
    backdoor_adjust, backdoor_estimate, joint_propensity_step, LppConfig, LppModel, PropensityEstimate,
};
use ultr_lab::ranking::ipw_ranking_loss;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..6).prop_flat_map(|dim| {
        prop::collection::vec(
            prop::collection::vec((0u8..=4, prop::collection::vec(-1e3f64..1e3, dim)), 1..6),
            1..5,
        )
        .prop_map(move |groups| Dataset {
            groups: groups
                .into_iter()
                .enumerate()
                .map(|(q, docs)| QueryGroup {
                    query_id: format!("{}", 100 + q),
                    docs: docs
                        .into_iter()
                        .enumerate()
                        .map(|(d, (y, f))| LabeledDoc {
                            doc_id: format!("doc-{q}-{d}"),
                            features: FeatureVector::new(f).unwrap(),
                            relevance: y,
                        })
                        .collect(),
                })
                .collect(),
            feature_dim: dim,
            split: Split::Train,
        })
    })
}

fn batch_strategy() -> impl Strategy<Value = Vec<ClickLog>> {
    prop::collection::vec(
        (1usize..5).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n * 3),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        }),
        1..5,
    )
    .prop_map(|lists| {
        lists
            .into_iter()
            .enumerate()
            .map(|(q, (x, s, c))| {
                let n = s.len();
                ClickLog::new(
                    format!("q{q}"),
                    (0..n).map(|d| format!("d{d}")).collect(),
                    Matrix::from_shape_vec((n, 3), x).unwrap(),
                    s,
                    c,
                )
            })
            .collect()
    })
}

fn small_lpp(seed: u64) -> LppModel {
    let cfg = LppConfig {
        latent_dim: 4,
        encoder_hidden: vec![5],
        ffn_hidden: vec![4],
        ..LppConfig::default()
    };
    LppModel::new(3, 4, &cfg, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svmlight_roundtrip(ds in dataset_strategy()) {
        let back = parse_svmlight(&to_svmlight(&ds)).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn listwise_ce_is_shift_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
        a in -20.0f64..20.0,
        b in -20.0f64..20.0,
    ) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = listwise_softmax_cross_entropy(&t, &p).unwrap();
        let ts: Vec<f64> = t.iter().map(|v| v + a).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + b).collect();
        let shifted = listwise_softmax_cross_entropy(&ts, &ps).unwrap();
        prop_assert!((base - shifted).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn ipw_loss_is_shift_invariant(
        rows in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..10),
        shift in -30.0f64..30.0,
    ) {
        let (s, c): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
        let p = PropensityEstimate::oracle(&PositionBiasCurve::reciprocal(s.len()), 1.0);
        let base = ipw_ranking_loss(&s, &c, &p).unwrap();
        let moved: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let shifted = ipw_ranking_loss(&moved, &c, &p).unwrap();
        prop_assert!((base - shifted).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn metrics_are_bounded_and_ideal_is_one(
        labels in prop::collection::vec(0u8..=4, 1..15),
        k in 1usize..12,
    ) {
        let n = ndcg_at_k(&labels, k);
        let e = err_at_k(&labels, k, 4);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        prop_assert!((0.0..=1.0).contains(&e));
        let mut ideal = labels.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert!((ndcg_at_k(&ideal, k) - 1.0).abs() < 1e-12);
        prop_assert!(err_at_k(&ideal, k, 4) >= e - 1e-12);
    }

    #[test]
    fn estimates_are_normalised_to_position_one(raw in prop::collection::vec(0.01f64..50.0, 1..10)) {
        let e = PropensityEstimate::from_raw(&raw).unwrap();
        prop_assert_eq!(e.weights()[0], 1.0);
        prop_assert!(e.weights().iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn normalized_propensity_is_scale_invariant(
        raw in prop::collection::vec(0.1f64..1.0, 2..10),
        c in 0.01f64..100.0,
    ) {
        let mut raw = raw;
        raw[0] = 1.0;
        let a = PropensityEstimate::from_raw(&raw).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        let b = PropensityEstimate::from_raw(&scaled).unwrap();
        let n = raw.len();
        for (x, y) in normalized_propensity(&a, n).iter().zip(normalized_propensity(&b, n)) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn backdoor_is_permutation_invariant(batch in batch_strategy(), seed in 0u64..50, k in 0usize..4) {
        let model = small_lpp(seed);
        let a = backdoor_adjust(&model, &batch, k).unwrap();
        let mut rev = batch.clone();
        rev.reverse();
        let b = backdoor_adjust(&model, &rev, k).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let ea = backdoor_estimate(&model, &batch).unwrap();
        let eb = backdoor_estimate(&model, &rev).unwrap();
        for (x, y) in ea.weights().iter().zip(eb.weights()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn frozen_confounder_never_moves(batch in batch_strategy(), seed in 0u64..50, steps in 1usize..5) {
        let mut model = small_lpp(seed);
        let before = model.store().snapshot();
        model.freeze_confounder();
        let mut opt = AdaGrad::new(0.5);
        let targets = [-0.1, -0.7, -1.2, -1.9];
        for _ in 0..steps {
            joint_propensity_step(&mut model, &mut opt, &batch, &targets).unwrap();
        }
        let after = model.store().snapshot();
        for (name, t) in &before.tensors {
            if !name.starts_with("lpp.positions") {
                prop_assert!(t == &after.tensors[name], "{} moved", name);
            }
        }
    }

    #[test]
    fn clicks_imply_examination(labels in prop::collection::vec(0u8..=4, 1..12), seed in any::<u64>()) {
        let group = QueryGroup {
            query_id: "q".into(),
            docs: labels
                .iter()
                .enumerate()
                .map(|(i, &y)| LabeledDoc {
                    doc_id: format!("d{i}"),
                    features: FeatureVector::new(vec![0.0]).unwrap(),
                    relevance: y,
                })
                .collect(),
        };
        let curve = PositionBiasCurve::reciprocal(10);
        let log = sample_session(&group, &vec![0.0; labels.len()], 1, &SimulationConfig::default(), &curve, seed).unwrap();
        let exam = log.hidden_examinations().unwrap();
        prop_assert_eq!(log.len(), labels.len().min(10));
        for (c, e) in log.clicks.iter().zip(exam) {
            prop_assert!(!c || *e);
        }
    }
}

#[test]
fn metrics_match_brute_force_references() {
    use rand::SeedableRng;
    let mut rng = ultr_lab::seeding::Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let labels = common::random_labels(&mut rng, 7, 4);
        for k in [1, 3, 5, 10] {
            assert!((ndcg_at_k(&labels, k) - common::brute_ndcg(&labels, k)).abs() <= 1e-12);
            assert!((err_at_k(&labels, k, 4) - common::brute_err(&labels, k, 4)).abs() <= 1e-12);
        }
    }
}
