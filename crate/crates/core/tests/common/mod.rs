//! Shared oracles for the integration suites: a central-difference gradient
//! checker, brute-force metric references, the IPW Monte Carlo harness and
//! the desk-scale synthetic setup.

#![allow(dead_code)]

pub mod gradients;

use rand::{Rng as _, SeedableRng};
use ultr_lab::autodiff::{ParamStore, Tape, Var};
use ultr_lab::click::{perceived_relevance_probability, sample_session_with, PositionBiasCurve, SimulationConfig};
use ultr_lab::data::{generate_synthetic_split, Dataset, FeatureVector, LabeledDoc, QueryGroup, Split};
use ultr_lab::propensity::PropensityEstimate;
use ultr_lab::ranking::{ideal_listwise_loss, ipw_ranking_loss};
use ultr_lab::seeding::Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, FD_FLOOR)` over
/// every parameter entry, with central differences of step [`FD_STEP`].
pub fn max_gradient_error<M>(
    model: &mut M,
    store: impl Fn(&mut M) -> &mut ParamStore,
    loss: impl Fn(&M, &mut Tape) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(model, &mut tape);
    store(model).zero_grad();
    tape.backward(l, store(model)).expect("backward");
    let params: Vec<_> = store(model).iter().map(|(id, p)| (id, p.grad.clone())).collect();

    let eval = |m: &M| {
        let mut t = Tape::new();
        let v = loss(m, &mut t);
        t.scalar(v)
    };
    let mut worst = 0.0f64;
    for (id, grad) in params {
        for ((i, j), &analytic) in grad.indexed_iter() {
            let orig = store(model).value(id)[[i, j]];
            store(model).value_mut(id)[[i, j]] = orig + FD_STEP;
            let up = eval(model);
            store(model).value_mut(id)[[i, j]] = orig - FD_STEP;
            let down = eval(model);
            store(model).value_mut(id)[[i, j]] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let denom = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// nDCG@k with the ideal DCG found by trying every permutation.
pub fn brute_ndcg(labels: &[u8], k: usize) -> f64 {
    let dcg = |ls: &[u8]| -> f64 {
        ls.iter()
            .take(k)
            .enumerate()
            .map(|(i, &y)| (2f64.powi(y as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut best = 0.0f64;
    let mut perm = labels.to_vec();
    permutations(&mut perm, 0, &mut |p| best = best.max(dcg(p)));
    if best == 0.0 {
        1.0
    } else {
        dcg(labels) / best
    }
}

fn permutations(v: &mut Vec<u8>, start: usize, visit: &mut impl FnMut(&[u8])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permutations(v, start + 1, visit);
        v.swap(start, i);
    }
}

/// ERR@k by summing over every joint satisfaction outcome of the first `k`
/// documents: the user stops at the first satisfying one and scores `1/rank`.
pub fn brute_err(labels: &[u8], k: usize, y_max: u8) -> f64 {
    let r: Vec<f64> = labels
        .iter()
        .take(k)
        .map(|&y| (2f64.powi(y as i32) - 1.0) / 2f64.powi(y_max as i32))
        .collect();
    let n = r.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let mut p = 1.0;
        for (i, ri) in r.iter().enumerate() {
            p *= if mask >> i & 1 == 1 { *ri } else { 1.0 - ri };
        }
        if mask != 0 {
            total += p / (mask.trailing_zeros() + 1) as f64;
        }
    }
    total
}

/// The fixed 3-query × 4-document set used for the unbiasedness check,
/// with the scores the ranker is frozen at.
pub fn tiny_ipw_setup() -> (Vec<QueryGroup>, Vec<Vec<f64>>) {
    let labels: [[u8; 4]; 3] = [[4, 2, 0, 1], [0, 0, 3, 1], [2, 2, 1, 0]];
    let scores = vec![
        vec![1.2, 0.4, -0.3, 0.1],
        vec![-0.5, 0.0, 0.9, 0.2],
        vec![0.3, 0.3, -0.1, -0.8],
    ];
    let groups = labels
        .iter()
        .enumerate()
        .map(|(q, ls)| QueryGroup {
            query_id: format!("q{q}"),
            docs: ls
                .iter()
                .enumerate()
                .map(|(d, &y)| LabeledDoc {
                    doc_id: format!("q{q}d{d}"),
                    features: FeatureVector::new(vec![d as f64, q as f64]).unwrap(),
                    relevance: y,
                })
                .collect(),
        })
        .collect();
    (groups, scores)
}

/// `(Monte Carlo mean of the IPW loss, full-information loss)` summed over
/// the tiny set, with the true propensities supplied.
pub fn ipw_monte_carlo(sessions: usize, seed: u64) -> (f64, f64) {
    let (groups, scores) = tiny_ipw_setup();
    let curve = PositionBiasCurve::reciprocal(4);
    let cfg = SimulationConfig {
        top_n: 4,
        ..SimulationConfig::default()
    };
    let oracle = PropensityEstimate::oracle(&curve, cfg.eta);
    let ideal: f64 = groups
        .iter()
        .zip(&scores)
        .map(|(g, s)| {
            let rel: Vec<f64> = g
                .docs
                .iter()
                .map(|d| perceived_relevance_probability(d.relevance, cfg.epsilon, cfg.y_max))
                .collect();
            ideal_listwise_loss(s, &rel).unwrap()
        })
        .sum();
    let mut rng = Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..sessions {
        for (g, s) in groups.iter().zip(&scores) {
            let log = sample_session_with(g, s, 2, &cfg, &curve, &mut rng).unwrap();
            total += ipw_ranking_loss(s, &log.clicks, &oracle).unwrap();
        }
    }
    (total / sessions as f64, ideal)
}

/// Random graded list of length `1..=max_len`.
pub fn random_labels(rng: &mut Rng, max_len: usize, y_max: u8) -> Vec<u8> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| rng.random_range(0..=y_max)).collect()
}

/// The desk-scale benchmark: 500 training queries × 10 documents × 16
/// features and a 200-query test split from the same teacher.
pub fn desk_data(seed: u64) -> (Dataset, Dataset) {
    (
        generate_synthetic_split(500, 10, 16, seed, Split::Train).unwrap(),
        generate_synthetic_split(200, 10, 16, seed, Split::Test).unwrap(),
    )
}

/// Largest deviation, over `models` random strictly positive CPTs and every
/// `(k, e, c)`, of (total-probability decomposition vs direct conditional,
/// backdoor sum vs interventional enumeration).
pub fn causal_identity_errors(models: usize, seed: u64) -> (f64, f64) {
    use ultr_lab::causal::{
        backdoor_sum, conditional, enumerate_joint, interventional, total_probability_decomposition, Event,
        ToyCausalModel,
    };
    let mut rng = Rng::seed_from_u64(seed);
    let (mut decomposition, mut backdoor) = (0.0f64, 0.0f64);
    for i in 0..models {
        let nx = rng.random_range(2..=5);
        let nk = rng.random_range(2..=5);
        let noise = if i % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.3) };
        let model = ToyCausalModel::random(nx, nk, noise, &mut rng);
        model.validate().unwrap();
        let table = enumerate_joint(&model);
        for k in 1..=nk {
            for e in [false, true] {
                for c in [false, true] {
                    let given = Event::any().k(k).c(c);
                    if table.prob(&given) == 0.0 {
                        continue;
                    }
                    let direct = conditional(&table, &Event::any().e(e), &given).unwrap();
                    let split = total_probability_decomposition(&table, nx, k, e, c).unwrap();
                    decomposition = decomposition.max((direct - split).abs());
                    let adjusted = backdoor_sum(&model, k, e, c).unwrap();
                    let cut = interventional(&model, k, &Event::any().e(e), &Event::any().c(c)).unwrap();
                    backdoor = backdoor.max((adjusted - cut).abs());
                }
            }
        }
    }
    (decomposition, backdoor)
}
