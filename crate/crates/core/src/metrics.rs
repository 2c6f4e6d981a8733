//! Ranking quality (nDCG, ERR) and propensity quality measures.

use serde::{Deserialize, Serialize};

use crate::click::PositionBiasCurve;
use crate::propensity::PropensityEstimate;

/// Cutoffs reported in learning curves.
pub const CUTOFFS: [usize; 4] = [1, 3, 5, 10];

fn gain(y: u8) -> f64 {
    2f64.powi(y as i32) - 1.0
}

fn dcg(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &y)| gain(y) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with gain `2^y − 1` and discount `1/log₂(pos+1)`. A list whose
/// ideal DCG is zero scores `1.0`.
pub fn ndcg_at_k(ranked_labels: &[u8], k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    let mut ideal = ranked_labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return 1.0;
    }
    dcg(ranked_labels, k) / idcg
}

/// ERR@k with stop probability `R = (2^y − 1) / 2^{y_max}`.
pub fn err_at_k(ranked_labels: &[u8], k: usize, y_max: u8) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    let denom = 2f64.powi(y_max as i32);
    let mut not_stopped = 1.0;
    let mut err = 0.0;
    for (i, &y) in ranked_labels.iter().take(k).enumerate() {
        let r = gain(y) / denom;
        err += not_stopped * r / (i + 1) as f64;
        not_stopped *= 1.0 - r;
    }
    err
}

/// Weights divided by the weight at 1-based `ref_position`.
pub fn normalized_propensity(estimate: &PropensityEstimate, ref_position: usize) -> Vec<f64> {
    let w = estimate.weights();
    assert!(
        (1..=w.len()).contains(&ref_position),
        "reference position {ref_position} outside 1..={}",
        w.len()
    );
    let r = w[ref_position - 1];
    w.iter().map(|v| v / r).collect()
}

/// Mean absolute relative error between the estimate and `ρ^η`, both
/// normalised to the last position.
pub fn propensity_error(estimate: &PropensityEstimate, truth: &PositionBiasCurve, eta: f64) -> f64 {
    let exam = truth.examination(eta);
    let n = exam.len();
    assert_eq!(estimate.len(), n, "estimate and curve lengths differ");
    let est = normalized_propensity(estimate, n);
    est.iter()
        .zip(&exam)
        .map(|(e, t)| {
            let tn = t / exam[n - 1];
            ((e - tn) / tn).abs()
        })
        .sum::<f64>()
        / n as f64
}

/// nDCG and ERR at every reported cutoff.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub ndcg: [f64; 4],
    pub err: [f64; 4],
}

impl RankingMetrics {
    pub fn of_list(ranked_labels: &[u8], y_max: u8) -> Self {
        let mut m = Self::default();
        for (i, &k) in CUTOFFS.iter().enumerate() {
            m.ndcg[i] = ndcg_at_k(ranked_labels, k);
            m.err[i] = err_at_k(ranked_labels, k, y_max);
        }
        m
    }

    /// Arithmetic mean over queries.
    pub fn mean(items: &[RankingMetrics]) -> Self {
        let mut m = Self::default();
        if items.is_empty() {
            return m;
        }
        for it in items {
            for i in 0..4 {
                m.ndcg[i] += it.ndcg[i];
                m.err[i] += it.err[i];
            }
        }
        let n = items.len() as f64;
        for i in 0..4 {
            m.ndcg[i] /= n;
            m.err[i] /= n;
        }
        m
    }

    pub fn ndcg10(&self) -> f64 {
        self.ndcg[3]
    }
}

/// One learning-curve row:
/// `step,algorithm,seed,ndcg@1,ndcg@3,ndcg@5,ndcg@10,err@1,err@3,err@5,err@10,norm_prop@1,prop_error`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub algorithm: String,
    pub seed: u64,
    #[serde(rename = "ndcg@1")]
    pub ndcg1: f64,
    #[serde(rename = "ndcg@3")]
    pub ndcg3: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: f64,
    #[serde(rename = "err@1")]
    pub err1: f64,
    #[serde(rename = "err@3")]
    pub err3: f64,
    #[serde(rename = "err@5")]
    pub err5: f64,
    #[serde(rename = "err@10")]
    pub err10: f64,
    #[serde(rename = "norm_prop@1")]
    pub norm_prop1: f64,
    pub prop_error: f64,
}

pub const CURVE_HEADER: [&str; 13] = [
    "step",
    "algorithm",
    "seed",
    "ndcg@1",
    "ndcg@3",
    "ndcg@5",
    "ndcg@10",
    "err@1",
    "err@3",
    "err@5",
    "err@10",
    "norm_prop@1",
    "prop_error",
];

impl CurveRow {
    pub fn new(step: usize, algorithm: &str, seed: u64, m: &RankingMetrics, norm_prop1: f64, prop_error: f64) -> Self {
        Self {
            step,
            algorithm: algorithm.to_owned(),
            seed,
            ndcg1: m.ndcg[0],
            ndcg3: m.ndcg[1],
            ndcg5: m.ndcg[2],
            ndcg10: m.ndcg[3],
            err1: m.err[0],
            err3: m.err[1],
            err5: m.err[2],
            err10: m.err[3],
            norm_prop1,
            prop_error,
        }
    }

    /// Numeric metric columns in header order (after `seed`).
    pub fn values(&self) -> [f64; 10] {
        [
            self.ndcg1,
            self.ndcg3,
            self.ndcg5,
            self.ndcg10,
            self.err1,
            self.err3,
            self.err5,
            self.err10,
            self.norm_prop1,
            self.prop_error,
        ]
    }
}

pub fn write_curves<W: std::io::Write>(rows: &[CurveRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves<R: std::io::Read>(input: R) -> Result<Vec<CurveRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
