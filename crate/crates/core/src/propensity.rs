//! Propensity models: the position-only model trained by inverse relevance
//! weighting, the logging-policy-aware model (LPP) with its two-step
//! optimisation, and backdoor-adjusted inference over a batch.

use std::ops::Range;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    log_softmax, record_listwise_ce, softmax, stack_rows, AdaGrad, EngineError, Matrix, Mlp, Mode, ParamGroup, ParamId,
    ParamStore, Snapshot, Tape, Var,
};
use crate::click::{ClickLog, PositionBiasCurve};
use crate::data::FeatureVector;
use crate::seeding::{rng_for, Rng};

/// Smallest weight an estimate may hold.
pub const MIN_WEIGHT: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PropensityError {
    #[error("degenerate propensity weights: {0}")]
    Degenerate(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Examination weights per position, normalised so position 1 is `1.0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityEstimate {
    weights: Vec<f64>,
}

impl PropensityEstimate {
    /// Normalises by the first entry and clamps into `(0, 1]`.
    pub fn from_raw(raw: &[f64]) -> Result<Self, PropensityError> {
        if raw.is_empty() {
            return Err(PropensityError::Degenerate("no positions".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PropensityError::Degenerate("negative or non-finite weight".into()));
        }
        let first = raw[0];
        if first <= 0.0 {
            return Err(PropensityError::Degenerate("position 1 has zero weight".into()));
        }
        Ok(Self {
            weights: raw.iter().map(|v| (v / first).clamp(MIN_WEIGHT, 1.0)).collect(),
        })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "estimate needs at least one position");
        Self { weights: vec![1.0; n] }
    }

    /// The true curve `ρ_k^η / ρ_1^η`.
    pub fn oracle(curve: &PositionBiasCurve, eta: f64) -> Self {
        Self::from_raw(&curve.examination(eta)).expect("validated curve")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `1 / max(w_k, floor)` for a 0-based position.
    pub fn inverse_weight(&self, k: usize, floor: f64) -> f64 {
        1.0 / self.weights[k].max(floor)
    }

    /// CSV rows `position,weight,normalized_weight_ref10`, normalised to the
    /// last position.
    pub fn to_csv(&self) -> String {
        let last = *self.weights.last().expect("non-empty");
        let mut out = String::from("position,weight,normalized_weight_ref10\n");
        for (k, w) in self.weights.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", k + 1, w, w / last));
        }
        out
    }
}

/// Contiguous row range of each log in a stacked batch.
pub fn batch_groups(batch: &[ClickLog]) -> Vec<Range<usize>> {
    let mut start = 0;
    batch
        .iter()
        .map(|log| {
            let r = start..start + log.len();
            start = r.end;
            r
        })
        .collect()
}

/// Feature rows of every displayed document, in batch order.
pub fn batch_features(batch: &[ClickLog]) -> Matrix {
    let dim = batch.first().map_or(0, |l| l.features.ncols());
    let rows: usize = batch.iter().map(ClickLog::len).sum();
    let mut x = Matrix::zeros((rows, dim));
    let mut r = 0;
    for log in batch {
        let n = log.len();
        x.slice_mut(ndarray::s![r..r + n, ..]).assign(&log.features);
        r += n;
    }
    x
}

/// 0-based display position of each row in a stacked batch.
pub fn batch_positions(batch: &[ClickLog]) -> Vec<usize> {
    batch.iter().flat_map(|log| 0..log.len()).collect()
}

/// `g(k)`: one free logit per position.
#[derive(Clone, Debug)]
pub struct PositionPropensityModel {
    store: ParamStore,
    logits: ParamId,
}

impl PositionPropensityModel {
    /// All-equal logits, so the initial estimate is uniform.
    pub fn new(num_positions: usize) -> Self {
        Self::from_logits(&vec![0.0; num_positions])
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        assert!(!logits.is_empty(), "at least one position");
        let mut store = ParamStore::new();
        let id = store.add(
            "position.logits",
            ParamGroup::PositionBias,
            Matrix::from_shape_vec((logits.len(), 1), logits.to_vec()).expect("column"),
        );
        Self { store, logits: id }
    }

    pub fn num_positions(&self) -> usize {
        self.store.value(self.logits).nrows()
    }

    pub fn logits(&self) -> Vec<f64> {
        self.store.value(self.logits).column(0).to_vec()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits())
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records the logit of each row's position.
    pub fn forward(&self, tape: &mut Tape, positions: &[usize]) -> Result<Var, EngineError> {
        let table = tape.param(&self.store, self.logits);
        tape.gather(table, positions)
    }
}

/// Softmax of the logits, renormalised to position 1.
pub fn dla_propensity(model: &PositionPropensityModel) -> PropensityEstimate {
    PropensityEstimate::from_raw(&softmax(&model.logits())).expect("softmax is positive")
}

/// Per-position coefficients `c_k · rel₁ / max(rel_k, floor)` where
/// `relevance` is normalised by its first entry.
pub fn irw_coefficients(clicks: &[bool], relevance: &[f64], floor: f64) -> Result<Vec<f64>, PropensityError> {
    if clicks.len() != relevance.len() {
        return Err(PropensityError::Length(clicks.len(), relevance.len()));
    }
    let Some(&first) = relevance.first() else {
        return Ok(Vec::new());
    };
    if first.is_nan() || first <= 0.0 || relevance.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PropensityError::Degenerate("relevance weights must be positive".into()));
    }
    Ok(clicks
        .iter()
        .zip(relevance)
        .map(|(&c, &r)| if c { 1.0 / (r / first).max(floor) } else { 0.0 })
        .collect())
}

/// The dual of the IPW ranking loss: clicks reweighted by inverse relevance
/// train the position scores.
pub fn irw_propensity_loss(
    position_scores: &[f64],
    clicks: &[bool],
    relevance_weights: &[f64],
) -> Result<f64, PropensityError> {
    if position_scores.len() != clicks.len() {
        return Err(PropensityError::Length(position_scores.len(), clicks.len()));
    }
    let coeffs = irw_coefficients(clicks, relevance_weights, crate::ranking::PROPENSITY_FLOOR)?;
    let ls = log_softmax(position_scores);
    Ok(-coeffs.iter().zip(&ls).map(|(w, l)| w * l).sum::<f64>())
}

/// One IRW update of the position model. `relevance[i]` holds the ranker's
/// softmax over the `i`-th log. Returns the batch-mean loss.
pub fn dla_propensity_step(
    model: &mut PositionPropensityModel,
    opt: &mut AdaGrad,
    batch: &[ClickLog],
    relevance: &[Vec<f64>],
    floor: f64,
) -> Result<f64, PropensityError> {
    if batch.is_empty() {
        return Err(PropensityError::EmptyBatch);
    }
    if batch.len() != relevance.len() {
        return Err(PropensityError::Length(batch.len(), relevance.len()));
    }
    let mut coeffs = Vec::new();
    for (log, rel) in batch.iter().zip(relevance) {
        coeffs.extend(irw_coefficients(&log.clicks, rel, floor)?);
    }
    let positions = batch_positions(batch);
    let groups = batch_groups(batch);
    let mut tape = Tape::new();
    let z = model.forward(&mut tape, &positions)?;
    let total = tape.weighted_log_softmax(z, &coeffs, &groups)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(loss, &mut model.store)?;
    opt.step(&mut model.store);
    Ok(tape.scalar(loss))
}

/// `y^p_k = log softmax(logits)_k` of a trained position-only model.
pub fn position_targets_from_base(base: &PositionPropensityModel) -> Vec<f64> {
    base.log_probs()
}

/// Squash applied to the LPP head before averaging over documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExaminationLink {
    /// `σ(v)`, bounded in `(0, 1)`.
    Logistic,
    /// `exp(v)`, consistent with the softmax the head is trained under.
    Exp,
}

impl ExaminationLink {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::Logistic => crate::autodiff::sigmoid(v),
            Self::Exp => v.exp(),
        }
    }

    /// `ln apply(v)`, finite wherever `v` is.
    pub fn log_apply(self, v: f64) -> f64 {
        match self {
            Self::Logistic => -softplus(-v),
            Self::Exp => v,
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// What the confounder head is fitted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfoundingTarget {
    LoggingScores,
    Mrr,
    Dcg,
}

/// `1/K` for 1-based position `k`.
pub fn mrr_target(k: usize) -> f64 {
    1.0 / k as f64
}

/// `1/log₂(K+1)` for 1-based position `k`.
pub fn dcg_target(k: usize) -> f64 {
    1.0 / ((k + 1) as f64).log2()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LppConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub ffn_hidden: Vec<usize>,
    pub link: ExaminationLink,
}

impl Default for LppConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            encoder_hidden: vec![16],
            ffn_hidden: vec![16, 64],
            link: ExaminationLink::Exp,
        }
    }
}

/// Confounder encoder `m = enc(x)`, position table `p_k` and shared head
/// `ffn`. Encoder and head form the `Confounder` group; the table forms the
/// `PositionEncoder` group.
#[derive(Clone, Debug)]
pub struct LppModel {
    store: ParamStore,
    encoder: Mlp,
    ffn: Mlp,
    table: ParamId,
    link: ExaminationLink,
}

impl LppModel {
    pub fn new(feature_dim: usize, num_positions: usize, cfg: &LppConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "lpp-init", 0);
        let mut store = ParamStore::new();
        let mut enc = vec![feature_dim];
        enc.extend_from_slice(&cfg.encoder_hidden);
        enc.push(cfg.latent_dim);
        let encoder = Mlp::new(&mut store, "lpp.encoder", ParamGroup::Confounder, &enc, 0.0, &mut rng);
        let mut head = vec![cfg.latent_dim];
        head.extend_from_slice(&cfg.ffn_hidden);
        head.push(1);
        let ffn = Mlp::new(&mut store, "lpp.ffn", ParamGroup::Confounder, &head, 0.0, &mut rng);
        let table = store.add(
            "lpp.positions",
            ParamGroup::PositionEncoder,
            Matrix::zeros((num_positions, cfg.latent_dim)),
        );
        Self {
            store,
            encoder,
            ffn,
            table,
            link: cfg.link,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn num_positions(&self) -> usize {
        self.store.value(self.table).nrows()
    }

    pub fn link(&self) -> ExaminationLink {
        self.link
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn position_table(&self) -> &Matrix {
        self.store.value(self.table)
    }

    pub fn position_table_mut(&mut self) -> &mut Matrix {
        self.store.value_mut(self.table)
    }

    pub fn freeze_confounder(&mut self) {
        self.store.freeze_group(ParamGroup::Confounder);
    }

    pub fn unfreeze_confounder(&mut self) {
        self.store.unfreeze_group(ParamGroup::Confounder);
    }

    pub fn confounder_frozen(&self) -> bool {
        self.store.group_frozen(ParamGroup::Confounder)
    }

    fn confounder_snapshot(&self) -> Snapshot {
        let mut s = self.store.snapshot();
        s.tensors.retain(|name, _| !name.starts_with("lpp.positions"));
        s
    }

    fn check_width(&self, x: &Matrix) -> Result<(), PropensityError> {
        if x.ncols() != self.feature_dim() {
            return Err(PropensityError::Config(format!(
                "feature width {} does not match model input {}",
                x.ncols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// `m = enc(x)` for every row.
    pub fn encode(&self, tape: &mut Tape, x: Matrix) -> Result<Var, PropensityError> {
        self.check_width(&x)?;
        let input = tape.constant(x);
        let mut rng = Rng::seed_from_u64(0);
        Ok(self.encoder.forward(tape, &self.store, input, Mode::Eval, &mut rng)?)
    }

    fn head(&self, tape: &mut Tape, h: Var) -> Result<Var, PropensityError> {
        let mut rng = Rng::seed_from_u64(0);
        Ok(self.ffn.forward(tape, &self.store, h, Mode::Eval, &mut rng)?)
    }

    /// `ŷ^r = ffn(enc(x))` for every row.
    pub fn confounder_forward(&self, tape: &mut Tape, x: Matrix) -> Result<Var, PropensityError> {
        let m = self.encode(tape, x)?;
        self.head(tape, m)
    }

    /// `ŷ^p = ffn(enc(x) + p_k)` for every row and its 0-based position.
    pub fn joint_forward(&self, tape: &mut Tape, x: Matrix, positions: &[usize]) -> Result<Var, PropensityError> {
        if x.nrows() != positions.len() {
            return Err(PropensityError::Length(x.nrows(), positions.len()));
        }
        let m = self.encode(tape, x)?;
        let table = tape.param(&self.store, self.table);
        let p = tape.gather(table, positions)?;
        let h = tape.add(m, p)?;
        self.head(tape, h)
    }

    /// Squashed head values `link(ffn(m_i + p_k))` for every row of `x` at
    /// 0-based position `k`.
    pub fn examination_values(&self, x: &Matrix, k: usize) -> Result<Vec<f64>, PropensityError> {
        Ok(self
            .head_table(x, &[k])?
            .remove(0)
            .into_iter()
            .map(|v| self.link.apply(v))
            .collect())
    }

    /// Raw head values `ffn(m_i + p_k)` for several positions, encoding `x`
    /// once.
    pub fn head_table(&self, x: &Matrix, positions: &[usize]) -> Result<Vec<Vec<f64>>, PropensityError> {
        let mut tape = Tape::new();
        let m = self.encode(&mut tape, x.clone())?;
        let m = tape.value(m).clone();
        let table = self.position_table();
        positions
            .iter()
            .map(|&k| {
                if k >= table.nrows() {
                    return Err(PropensityError::Length(k + 1, table.nrows()));
                }
                let mut tape = Tape::new();
                let h = tape.constant(&m + &table.row(k));
                let out = self.head(&mut tape, h)?;
                Ok(tape.column(out))
            })
            .collect()
    }
}

/// `ffn(enc(x))` for one document.
pub fn lpp_confounder_forward(model: &LppModel, x: &FeatureVector) -> Result<f64, PropensityError> {
    let mut tape = Tape::new();
    let row = stack_rows([x.as_slice()], x.len());
    let out = model.confounder_forward(&mut tape, row)?;
    Ok(tape.scalar(out))
}

fn confounding_targets(batch: &[ClickLog], target: ConfoundingTarget) -> Result<Vec<f64>, PropensityError> {
    let mut out = Vec::new();
    for log in batch {
        match target {
            ConfoundingTarget::LoggingScores => {
                if log.logging_scores.len() != log.len() || log.logging_scores.iter().any(|v| !v.is_finite()) {
                    return Err(PropensityError::Config(format!(
                        "log for query {} lacks usable logging scores",
                        log.query_id
                    )));
                }
                out.extend_from_slice(&log.logging_scores);
            }
            ConfoundingTarget::Mrr => out.extend((1..=log.len()).map(mrr_target)),
            ConfoundingTarget::Dcg => out.extend((1..=log.len()).map(dcg_target)),
        }
    }
    Ok(out)
}

/// Fits `ffn(enc(x))` to the chosen per-list target with listwise
/// cross-entropy. Returns the batch-mean loss.
pub fn confounding_effect_step(
    model: &mut LppModel,
    opt: &mut AdaGrad,
    batch: &[ClickLog],
    target: ConfoundingTarget,
) -> Result<f64, PropensityError> {
    if batch.is_empty() {
        return Err(PropensityError::EmptyBatch);
    }
    let targets = confounding_targets(batch, target)?;
    let groups = batch_groups(batch);
    let mut tape = Tape::new();
    let out = model.confounder_forward(&mut tape, batch_features(batch))?;
    let total = record_listwise_ce(&mut tape, out, &targets, &groups)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(loss, &mut model.store)?;
    opt.step(&mut model.store);
    Ok(tape.scalar(loss))
}

fn joint_step(
    model: &mut LppModel,
    opt: &mut AdaGrad,
    batch: &[ClickLog],
    position_targets: &[f64],
) -> Result<f64, PropensityError> {
    if batch.is_empty() {
        return Err(PropensityError::EmptyBatch);
    }
    let positions = batch_positions(batch);
    if let Some(&k) = positions.iter().find(|&&k| k >= position_targets.len()) {
        return Err(PropensityError::Length(k + 1, position_targets.len()));
    }
    let targets: Vec<f64> = positions.iter().map(|&k| position_targets[k]).collect();
    let groups = batch_groups(batch);
    let mut tape = Tape::new();
    let out = model.joint_forward(&mut tape, batch_features(batch), &positions)?;
    let total = record_listwise_ce(&mut tape, out, &targets, &groups)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(loss, &mut model.store)?;
    opt.step(&mut model.store);
    Ok(tape.scalar(loss))
}

/// Fits `ffn(enc(x) + p_k)` to the position targets while the confounder
/// group is frozen, so only the position table moves.
pub fn joint_propensity_step(
    model: &mut LppModel,
    opt: &mut AdaGrad,
    batch: &[ClickLog],
    position_targets: &[f64],
) -> Result<f64, PropensityError> {
    if !model.confounder_frozen() {
        return Err(PropensityError::State(
            "confounder parameters must be frozen before the joint step".into(),
        ));
    }
    let before = model.confounder_snapshot();
    let loss = joint_step(model, opt, batch, position_targets)?;
    if !model.confounder_snapshot().bitwise_eq(&before) {
        return Err(PropensityError::State(
            "confounder parameters changed during the joint step".into(),
        ));
    }
    Ok(loss)
}

/// The single-step variant: the joint loss updates every LPP parameter.
pub fn joint_propensity_step_unlocked(
    model: &mut LppModel,
    opt: &mut AdaGrad,
    batch: &[ClickLog],
    position_targets: &[f64],
) -> Result<f64, PropensityError> {
    joint_step(model, opt, batch, position_targets)
}

/// `P(E | do(K=k), C)` estimated as the mean squashed head value over every
/// document in the batch, with `k` 0-based.
pub fn backdoor_adjust(model: &LppModel, batch: &[ClickLog], k: usize) -> Result<f64, PropensityError> {
    if batch.iter().all(ClickLog::is_empty) {
        return Err(PropensityError::EmptyBatch);
    }
    if k >= model.num_positions() {
        return Err(PropensityError::Length(k + 1, model.num_positions()));
    }
    let v = model.examination_values(&batch_features(batch), k)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Backdoor adjustment at every position, renormalised to position 1.
pub fn backdoor_estimate(model: &LppModel, batch: &[ClickLog]) -> Result<PropensityEstimate, PropensityError> {
    if batch.iter().all(ClickLog::is_empty) {
        return Err(PropensityError::EmptyBatch);
    }
    let positions: Vec<usize> = (0..model.num_positions()).collect();
    let log_means: Vec<f64> = model
        .head_table(&batch_features(batch), &positions)?
        .iter()
        .map(|v| log_mean_exp(&v.iter().map(|&h| model.link.log_apply(h)).collect::<Vec<_>>()))
        .collect();
    let raw: Vec<f64> = log_means.iter().map(|l| (l - log_means[0]).exp()).collect();
    PropensityEstimate::from_raw(&raw)
}
