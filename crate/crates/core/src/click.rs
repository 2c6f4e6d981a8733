//! Position-based click simulation.
//!
//! A user examines position `k` with probability `ρ_k^η` and perceives a
//! document of grade `y` as relevant with probability
//! `ε + (1 − ε)(2^y − 1)/(2^{y_max} − 1)`. A click happens iff both events
//! occur.

use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::data::{QueryGroup, DEFAULT_Y_MAX};
use crate::seeding::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum ClickError {
    #[error("position {k} outside 1..={n}")]
    Position { k: usize, n: usize },
    #[error("invalid position bias curve: {0}")]
    InvalidCurve(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Examination probability per displayable position, `1 ≥ ρ₁ ≥ … ≥ ρ_N > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionBiasCurve {
    rho: Vec<f64>,
}

impl PositionBiasCurve {
    pub fn new(rho: Vec<f64>) -> Result<Self, ClickError> {
        if rho.is_empty() {
            return Err(ClickError::InvalidCurve("empty curve".into()));
        }
        if rho.iter().any(|r| !r.is_finite() || *r <= 0.0 || *r > 1.0) {
            return Err(ClickError::InvalidCurve("values must lie in (0, 1]".into()));
        }
        if rho.windows(2).any(|w| w[1] > w[0]) {
            return Err(ClickError::InvalidCurve("values must be nonincreasing".into()));
        }
        Ok(Self { rho })
    }

    /// `ρ_k = 1/k` for `k = 1..=n`.
    pub fn reciprocal(n: usize) -> Self {
        Self {
            rho: (1..=n).map(|k| 1.0 / k as f64).collect(),
        }
    }

    /// One probability per line, top position first. Blank lines and `#`
    /// comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, ClickError> {
        let mut rho = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| ClickError::InvalidCurve(format!("line {}: `{line}`", i + 1)))?;
            rho.push(v);
        }
        Self::new(rho)
    }

    pub fn load(path: &Path) -> Result<Self, ClickError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClickError::Io(e.to_string()))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.rho.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    /// `ρ_k^η` for every position.
    pub fn examination(&self, eta: f64) -> Vec<f64> {
        self.rho.iter().map(|r| r.powf(eta)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Severity exponent on the position bias curve.
    pub eta: f64,
    /// Click noise: probability that an irrelevant document looks relevant.
    pub epsilon: f64,
    pub y_max: u8,
    /// Number of displayed positions.
    pub top_n: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            epsilon: 0.1,
            y_max: DEFAULT_Y_MAX,
            top_n: 10,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self, curve: &PositionBiasCurve) -> Result<(), ClickError> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(ClickError::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(ClickError::Config(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if self.y_max == 0 {
            return Err(ClickError::Config("y_max must be positive".into()));
        }
        if self.top_n != curve.len() {
            return Err(ClickError::Config(format!(
                "top_n {} does not match curve length {}",
                self.top_n,
                curve.len()
            )));
        }
        Ok(())
    }
}

pub fn examination_probability(k: usize, curve: &PositionBiasCurve, eta: f64) -> Result<f64, ClickError> {
    if k == 0 || k > curve.len() {
        return Err(ClickError::Position { k, n: curve.len() });
    }
    Ok(curve.rho[k - 1].powf(eta))
}

pub fn perceived_relevance_probability(y: u8, epsilon: f64, y_max: u8) -> f64 {
    debug_assert!(y <= y_max);
    let gain = (2f64.powi(y as i32) - 1.0) / (2f64.powi(y_max as i32) - 1.0);
    epsilon + (1.0 - epsilon) * gain
}

/// One simulated impression of a ranked list.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickLog {
    pub query_id: String,
    pub displayed: Vec<String>,
    /// Feature rows of the displayed documents, in display order.
    pub features: Matrix,
    /// Logging-policy score of each displayed document.
    pub logging_scores: Vec<f64>,
    pub clicks: Vec<bool>,
    hidden_exam: Option<Vec<bool>>,
}

impl ClickLog {
    pub fn new(
        query_id: String,
        displayed: Vec<String>,
        features: Matrix,
        logging_scores: Vec<f64>,
        clicks: Vec<bool>,
    ) -> Self {
        assert_eq!(displayed.len(), clicks.len());
        assert_eq!(displayed.len(), logging_scores.len());
        assert_eq!(displayed.len(), features.nrows());
        Self {
            query_id,
            displayed,
            features,
            logging_scores,
            clicks,
            hidden_exam: None,
        }
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }

    /// Simulator-side examination outcomes. Diagnostics only: no learner in
    /// this crate reads them.
    pub fn hidden_examinations(&self) -> Option<&[bool]> {
        self.hidden_exam.as_deref()
    }

    /// Drops the diagnostic examination record.
    pub fn without_hidden(mut self) -> Self {
        self.hidden_exam = None;
        self
    }
}

/// Samples examinations and clicks for a list already in display order.
/// The list is truncated to `cfg.top_n`; `logging_scores` aligns with the
/// (untruncated) list.
pub fn sample_session(
    ranked: &QueryGroup,
    logging_scores: &[f64],
    feature_dim: usize,
    cfg: &SimulationConfig,
    curve: &PositionBiasCurve,
    rng_seed: u64,
) -> Result<ClickLog, ClickError> {
    let mut rng = Rng::seed_from_u64(rng_seed);
    sample_session_with(ranked, logging_scores, feature_dim, cfg, curve, &mut rng)
}

pub fn sample_session_with(
    ranked: &QueryGroup,
    logging_scores: &[f64],
    feature_dim: usize,
    cfg: &SimulationConfig,
    curve: &PositionBiasCurve,
    rng: &mut Rng,
) -> Result<ClickLog, ClickError> {
    if logging_scores.len() != ranked.docs.len() {
        return Err(ClickError::Config(format!(
            "{} logging scores for {} documents",
            logging_scores.len(),
            ranked.docs.len()
        )));
    }
    let n = ranked.docs.len().min(cfg.top_n).min(curve.len());
    let exam = curve.examination(cfg.eta);
    let mut clicks = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    for (k, doc) in ranked.docs.iter().take(n).enumerate() {
        let e = rng.random::<f64>() < exam[k];
        let r = rng.random::<f64>() < perceived_relevance_probability(doc.relevance, cfg.epsilon, cfg.y_max);
        hidden.push(e);
        clicks.push(e && r);
    }
    let order: Vec<usize> = (0..n).collect();
    Ok(ClickLog {
        query_id: ranked.query_id.clone(),
        displayed: ranked.docs[..n].iter().map(|d| d.doc_id.clone()).collect(),
        features: ranked.rows_matrix(&order, feature_dim),
        logging_scores: logging_scores[..n].to_vec(),
        clicks,
        hidden_exam: Some(hidden),
    })
}
