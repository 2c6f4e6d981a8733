//! The scoring function and its propensity-weighted listwise loss.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    log_softmax, stack_rows, EngineError, Matrix, Mlp, Mode, ParamGroup, ParamStore, Snapshot, Tape, Var,
};
use crate::data::FeatureVector;
use crate::propensity::PropensityEstimate;
use crate::seeding::{rng_for, Rng};

/// Desk-scale hidden widths.
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 32, 16];
/// Hidden widths used for the published benchmark runs.
pub const PAPER_HIDDEN: [usize; 3] = [512, 256, 128];
pub const DEFAULT_DROPOUT: f64 = 0.1;
/// Lower clip on normalised propensities before inversion.
pub const PROPENSITY_FLOOR: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty document list")]
    Empty,
    #[error("feature width {got} does not match model input {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// `f(x)`: an ELU MLP with dropout mapping one feature vector to one score.
#[derive(Clone, Debug)]
pub struct RankerMlp {
    store: ParamStore,
    net: Mlp,
    feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerSnapshot {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub params: Snapshot,
}

impl RankerMlp {
    pub fn new(feature_dim: usize, hidden: &[usize], dropout: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, "ranker-init", 0);
        let mut store = ParamStore::new();
        let mut sizes = vec![feature_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::new(&mut store, "ranker", ParamGroup::Ranker, &sizes, dropout, &mut rng);
        Self {
            store,
            net,
            feature_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.net.sizes();
        &s[1..s.len() - 1]
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn zero_parameters(&mut self) {
        let ids: Vec<_> = self.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            self.store.value_mut(id).fill(0.0);
        }
    }

    /// Records scores for the rows of `x` as an `n×1` column.
    pub fn forward(&self, tape: &mut Tape, x: Matrix, mode: Mode, rng: &mut Rng) -> Result<Var, RankError> {
        if x.ncols() != self.feature_dim {
            return Err(RankError::FeatureWidth {
                expected: self.feature_dim,
                got: x.ncols(),
            });
        }
        let input = tape.constant(x);
        Ok(self.net.forward(tape, &self.store, input, mode, rng)?)
    }

    /// Eval-mode scores for matrix rows.
    pub fn score_matrix(&self, x: &Matrix) -> Result<Vec<f64>, RankError> {
        let mut tape = Tape::new();
        let mut rng = Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, x.clone(), Mode::Eval, &mut rng)?;
        Ok(tape.column(out))
    }

    pub fn score_list(&self, docs: &[FeatureVector], mode: Mode, rng: &mut Rng) -> Result<Vec<f64>, RankError> {
        if docs.is_empty() {
            return Err(RankError::Empty);
        }
        if let Some(d) = docs.iter().find(|d| d.len() != self.feature_dim) {
            return Err(RankError::FeatureWidth {
                expected: self.feature_dim,
                got: d.len(),
            });
        }
        let x = stack_rows(docs.iter().map(FeatureVector::as_slice), self.feature_dim);
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, mode, rng)?;
        Ok(tape.column(out))
    }

    pub fn snapshot(&self) -> RankerSnapshot {
        RankerSnapshot {
            feature_dim: self.feature_dim,
            hidden: self.hidden().to_vec(),
            dropout: self.net.dropout(),
            params: self.store.snapshot(),
        }
    }

    pub fn from_snapshot(snap: &RankerSnapshot) -> Result<Self, RankError> {
        let mut model = Self::new(snap.feature_dim, &snap.hidden, snap.dropout, 0);
        model.store.load_snapshot(&snap.params)?;
        Ok(model)
    }
}

/// Per-position coefficients of the IPW loss: `c_k · p₁ / max(p_k, floor)`.
pub fn ipw_coefficients(clicks: &[bool], propensity: &PropensityEstimate, floor: f64) -> Vec<f64> {
    clicks
        .iter()
        .enumerate()
        .map(|(k, &c)| if c { propensity.inverse_weight(k, floor) } else { 0.0 })
        .collect()
}

/// `-Σ_{k: c_k=1} w_k · log softmax(scores)_k` with `w_k = p₁ / max(p_k, τ)`.
pub fn ipw_ranking_loss(scores: &[f64], clicks: &[bool], propensity: &PropensityEstimate) -> Result<f64, RankError> {
    if scores.len() != clicks.len() {
        return Err(RankError::Length(scores.len(), clicks.len()));
    }
    if scores.len() > propensity.len() {
        return Err(RankError::Length(scores.len(), propensity.len()));
    }
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    let coeffs = ipw_coefficients(clicks, propensity, PROPENSITY_FLOOR);
    let ls = log_softmax(scores);
    Ok(-coeffs.iter().zip(&ls).map(|(w, l)| w * l).sum::<f64>())
}

/// Full-information listwise loss `-Σ_k P(r_k=1) · log softmax(scores)_k`,
/// the expectation the IPW loss estimates from clicks.
pub fn ideal_listwise_loss(scores: &[f64], relevance_probs: &[f64]) -> Result<f64, RankError> {
    if scores.len() != relevance_probs.len() {
        return Err(RankError::Length(scores.len(), relevance_probs.len()));
    }
    let ls = log_softmax(scores);
    Ok(-relevance_probs.iter().zip(&ls).map(|(r, l)| r * l).sum::<f64>())
}
