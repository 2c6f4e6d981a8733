//! Training orchestration for the four learners (UPE, DLA, naive, oracle
//! IPW) under the online deterministic and offline paradigms.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax, AdaGrad, EngineError, Matrix, Mode, Tape, Var};
use crate::click::{sample_session_with, ClickError, ClickLog, PositionBiasCurve, SimulationConfig};
use crate::data::{DataError, Dataset, QueryGroup};
use crate::metrics::{normalized_propensity, propensity_error, CurveRow, RankingMetrics};
use crate::propensity::{
    backdoor_estimate, batch_features, batch_groups, confounding_effect_step, dla_propensity, dla_propensity_step,
    joint_propensity_step, joint_propensity_step_unlocked, position_targets_from_base, ConfoundingTarget, LppConfig,
    LppModel, PositionPropensityModel, PropensityError, PropensityEstimate,
};
use crate::ranking::{ipw_coefficients, RankError, RankerMlp, RankerSnapshot, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::seeding::{derive_seed, rng_for, Rng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// Deterministic online: the logging policy is periodically replaced by
    /// the current ranker.
    #[default]
    Ond,
    /// Offline: one fixed logging policy.
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Upe,
    Dla,
    Naive,
    IpwOracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Upe, Self::Dla, Self::Naive, Self::IpwOracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::Upe => "upe",
            Self::Dla => "dla",
            Self::Naive => "naive",
            Self::IpwOracle => "ipw_oracle",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub algorithm: Algorithm,
    pub total_steps: usize,
    pub batch_queries: usize,
    pub refresh_interval: usize,
    /// Steps between test-split evaluations.
    pub eval_interval: usize,
    pub learning_rate: f64,
    /// Learning rate of the propensity models. Large enough for the position
    /// model to settle within the first logging epoch.
    pub propensity_learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Lower clip on normalised propensities and relevances before inversion.
    pub propensity_floor: f64,
    /// Share of training queries used to fit the offline weak policy.
    pub weak_fraction: f64,
    pub target_variant: ConfoundingTarget,
    /// Freeze the confounder group during the joint step. `false` runs the
    /// single-step variant.
    pub two_step: bool,
    pub simulation: SimulationConfig,
    /// Position bias curve `ρ`; `1/k` when absent.
    pub curve: Option<Vec<f64>>,
    pub lpp: LppConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Ond,
            algorithm: Algorithm::Upe,
            total_steps: 2000,
            batch_queries: 32,
            refresh_interval: 250,
            eval_interval: 100,
            learning_rate: 0.02,
            propensity_learning_rate: 0.5,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            propensity_floor: crate::ranking::PROPENSITY_FLOOR,
            weak_fraction: 0.01,
            target_variant: ConfoundingTarget::LoggingScores,
            two_step: true,
            simulation: SimulationConfig::default(),
            curve: None,
            lpp: LppConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn position_curve(&self) -> Result<PositionBiasCurve, ExperimentError> {
        Ok(match &self.curve {
            Some(rho) => PositionBiasCurve::new(rho.clone())?,
            None => PositionBiasCurve::reciprocal(self.simulation.top_n),
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let positive = [
            ("total_steps", self.total_steps),
            ("batch_queries", self.batch_queries),
            ("refresh_interval", self.refresh_interval),
            ("eval_interval", self.eval_interval),
            ("top_n", self.simulation.top_n),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ExperimentError::Config(format!("{name} must be positive")));
        }
        if !self.total_steps.is_multiple_of(self.refresh_interval) {
            return Err(ExperimentError::Config(format!(
                "refresh_interval {} does not divide total_steps {}",
                self.refresh_interval, self.total_steps
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("propensity_learning_rate", self.propensity_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ExperimentError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor <= 1.0) {
            return Err(ExperimentError::Config("propensity_floor must lie in (0, 1]".into()));
        }
        if !(self.weak_fraction > 0.0 && self.weak_fraction <= 1.0) {
            return Err(ExperimentError::Config("weak_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ExperimentError::Config("dropout must lie in [0, 1)".into()));
        }
        if self.hidden.contains(&0) || self.lpp.latent_dim == 0 {
            return Err(ExperimentError::Config("layer widths must be positive".into()));
        }
        self.simulation.validate(&self.position_curve()?)?;
        Ok(())
    }

    fn fresh_ranker(&self, feature_dim: usize) -> RankerMlp {
        RankerMlp::new(
            feature_dim,
            &self.hidden,
            self.dropout,
            derive_seed(self.seed, "ranker", 0),
        )
    }
}

/// Frozen scorer that produces logging scores `y^r` and the displayed order.
#[derive(Clone, Debug)]
pub enum LoggingPolicy {
    Linear { weights: Vec<f64> },
    Ranker(RankerMlp),
}

impl LoggingPolicy {
    pub fn from_ranker(ranker: &RankerMlp) -> Self {
        Self::Ranker(ranker.clone())
    }

    pub fn scores(&self, group: &QueryGroup, feature_dim: usize) -> Result<Vec<f64>, ExperimentError> {
        match self {
            Self::Linear { weights } => Ok(group
                .docs
                .iter()
                .map(|d| d.features.as_slice().iter().zip(weights).map(|(x, w)| x * w).sum())
                .collect()),
            Self::Ranker(r) => Ok(r.score_matrix(&group.feature_matrix(feature_dim))?),
        }
    }

    /// The group re-ordered for display together with the aligned scores.
    pub fn display(&self, group: &QueryGroup, feature_dim: usize) -> Result<(QueryGroup, Vec<f64>), ExperimentError> {
        let scores = self.scores(group, feature_dim)?;
        let order = display_order(group, &scores);
        let ranked = QueryGroup {
            query_id: group.query_id.clone(),
            docs: order.iter().map(|&i| group.docs[i].clone()).collect(),
        };
        Ok((ranked, order.iter().map(|&i| scores[i]).collect()))
    }
}

/// Indices by descending score, ties broken by ascending doc id.
pub fn display_order(group: &QueryGroup, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..group.docs.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| group.docs[a].doc_id.cmp(&group.docs[b].doc_id))
    });
    order
}

/// Linear scorer fitted with a pairwise hinge loss on a sampled share of the
/// training queries, using true labels.
pub fn train_weak_policy(dataset: &Dataset, fraction: f64, seed: u64) -> Result<LoggingPolicy, ExperimentError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExperimentError::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = (fraction * dataset.groups.len() as f64).floor() as usize;
    if n == 0 {
        return Err(ExperimentError::Sampling(format!(
            "fraction {fraction} of {} queries samples none",
            dataset.groups.len()
        )));
    }
    let mut rng = rng_for(seed, "weak-policy", 0);
    let mut ids: Vec<usize> = (0..dataset.groups.len()).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n);
    ids.sort_unstable();

    let mut pairs = Vec::new();
    for &q in &ids {
        let docs = &dataset.groups[q].docs;
        for (i, a) in docs.iter().enumerate() {
            for (j, b) in docs.iter().enumerate() {
                if a.relevance > b.relevance {
                    pairs.push((q, i, j));
                }
            }
        }
    }
    let dim = dataset.feature_dim;
    let mut w = vec![0.0; dim];
    let lr = 0.01;
    for _ in 0..100 {
        pairs.shuffle(&mut rng);
        for &(q, i, j) in &pairs {
            let xi = dataset.groups[q].docs[i].features.as_slice();
            let xj = dataset.groups[q].docs[j].features.as_slice();
            let margin: f64 = (0..dim).map(|f| w[f] * (xi[f] - xj[f])).sum();
            if margin < 1.0 {
                for f in 0..dim {
                    w[f] += lr * (xi[f] - xj[f]);
                }
            }
        }
    }
    Ok(LoggingPolicy::Linear { weights: w })
}

/// Mean ranking metrics of `ranker` over a labelled split, ranking each
/// query's full candidate list in eval mode.
pub fn evaluate(ranker: &RankerMlp, dataset: &Dataset, y_max: u8) -> Result<RankingMetrics, ExperimentError> {
    let policy = LoggingPolicy::Ranker(ranker.clone());
    let per_query = dataset
        .groups
        .iter()
        .map(|g| {
            let (ranked, _) = policy.display(g, dataset.feature_dim)?;
            Ok(RankingMetrics::of_list(&ranked.labels(), y_max))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(RankingMetrics::mean(&per_query))
}

/// Models and optimiser state of one learner.
#[derive(Clone, Debug)]
pub struct Learner {
    pub algorithm: Algorithm,
    pub ranker: RankerMlp,
    pub position: PositionPropensityModel,
    pub lpp: LppModel,
    ranker_opt: AdaGrad,
    position_opt: AdaGrad,
    lpp_opt: AdaGrad,
    floor: f64,
    target: ConfoundingTarget,
    two_step: bool,
    oracle: PropensityEstimate,
    estimate: PropensityEstimate,
}

impl Learner {
    pub fn new(cfg: &ExperimentConfig, feature_dim: usize) -> Result<Self, ExperimentError> {
        let curve = cfg.position_curve()?;
        let n = cfg.simulation.top_n;
        let oracle = PropensityEstimate::oracle(&curve, cfg.simulation.eta);
        let estimate = match cfg.algorithm {
            Algorithm::IpwOracle => oracle.clone(),
            _ => PropensityEstimate::uniform(n),
        };
        Ok(Self {
            algorithm: cfg.algorithm,
            ranker: cfg.fresh_ranker(feature_dim),
            position: PositionPropensityModel::new(n),
            lpp: LppModel::new(feature_dim, n, &cfg.lpp, derive_seed(cfg.seed, "lpp", 0)),
            ranker_opt: AdaGrad::new(cfg.learning_rate),
            position_opt: AdaGrad::new(cfg.propensity_learning_rate),
            lpp_opt: AdaGrad::new(cfg.propensity_learning_rate),
            floor: cfg.propensity_floor,
            target: cfg.target_variant,
            two_step: cfg.two_step,
            oracle,
            estimate,
        })
    }

    /// The estimate most recently used to weight the ranking loss.
    pub fn estimate(&self) -> &PropensityEstimate {
        &self.estimate
    }

    fn ranker_forward(&self, batch: &[ClickLog], rng: &mut Rng) -> Result<(Tape, Var), ExperimentError> {
        let mut tape = Tape::new();
        let out = self
            .ranker
            .forward(&mut tape, batch_features(batch), Mode::Train, rng)?;
        Ok((tape, out))
    }

    fn ranker_update(
        &mut self,
        tape: &mut Tape,
        out: Var,
        batch: &[ClickLog],
        estimate: &PropensityEstimate,
    ) -> Result<f64, ExperimentError> {
        let coeffs: Vec<f64> = batch
            .iter()
            .flat_map(|log| ipw_coefficients(&log.clicks, estimate, self.floor))
            .collect();
        let total = tape.weighted_log_softmax(out, &coeffs, &batch_groups(batch))?;
        let loss = tape.scale(total, 1.0 / batch.len() as f64);
        tape.backward(loss, self.ranker.store_mut())?;
        self.ranker_opt.step(self.ranker.store_mut());
        Ok(tape.scalar(loss))
    }

    fn relevance_weights(tape: &Tape, out: Var, batch: &[ClickLog]) -> Vec<Vec<f64>> {
        let scores = tape.column(out);
        batch_groups(batch).into_iter().map(|g| softmax(&scores[g])).collect()
    }

    fn base_update(&mut self, tape: &Tape, out: Var, batch: &[ClickLog]) -> Result<(), ExperimentError> {
        let rel = Self::relevance_weights(tape, out, batch);
        dla_propensity_step(&mut self.position, &mut self.position_opt, batch, &rel, self.floor)?;
        Ok(())
    }

    /// One training step of the configured algorithm on one batch of logs.
    /// Returns the ranking loss.
    pub fn step(&mut self, batch: &[ClickLog], rng: &mut Rng) -> Result<f64, ExperimentError> {
        if batch.is_empty() {
            return Err(PropensityError::EmptyBatch.into());
        }
        match self.algorithm {
            Algorithm::Upe => upe_iteration(self, batch, rng),
            Algorithm::Dla => {
                let (mut tape, out) = self.ranker_forward(batch, rng)?;
                let estimate = dla_propensity(&self.position);
                self.base_update(&tape, out, batch)?;
                let loss = self.ranker_update(&mut tape, out, batch, &estimate)?;
                self.estimate = dla_propensity(&self.position);
                Ok(loss)
            }
            Algorithm::Naive | Algorithm::IpwOracle => {
                let estimate = if self.algorithm == Algorithm::Naive {
                    PropensityEstimate::uniform(self.oracle.len())
                } else {
                    self.oracle.clone()
                };
                let (mut tape, out) = self.ranker_forward(batch, rng)?;
                let loss = self.ranker_update(&mut tape, out, batch, &estimate)?;
                self.estimate = estimate;
                Ok(loss)
            }
        }
    }
}

/// One loop body of the unconfounded estimator: base position update, fit of
/// the confounder to the logging policy, frozen joint fit of the position
/// table, backdoor adjustment over the batch, and the weighted ranker update.
pub fn upe_iteration(learner: &mut Learner, batch: &[ClickLog], rng: &mut Rng) -> Result<f64, ExperimentError> {
    let (mut tape, out) = learner.ranker_forward(batch, rng)?;
    learner.base_update(&tape, out, batch)?;
    let targets = position_targets_from_base(&learner.position);

    confounding_effect_step(&mut learner.lpp, &mut learner.lpp_opt, batch, learner.target)?;
    if learner.two_step {
        learner.lpp.freeze_confounder();
        let joint = joint_propensity_step(&mut learner.lpp, &mut learner.lpp_opt, batch, &targets);
        learner.lpp.unfreeze_confounder();
        joint?;
    } else {
        joint_propensity_step_unlocked(&mut learner.lpp, &mut learner.lpp_opt, batch, &targets)?;
    }

    let estimate = backdoor_estimate(&learner.lpp, batch)?;
    let loss = learner.ranker_update(&mut tape, out, batch, &estimate)?;
    learner.estimate = estimate;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub curves: Vec<CurveRow>,
    pub final_metrics: RankingMetrics,
    pub final_propensity: PropensityEstimate,
    pub ranker: RankerSnapshot,
}

impl RunResult {
    pub fn final_ndcg10(&self) -> f64 {
        self.final_metrics.ndcg10()
    }

    /// Final propensity at position 1 relative to the last position.
    pub fn normalized_propensity_at_1(&self) -> f64 {
        normalized_propensity(&self.final_propensity, self.final_propensity.len())[0]
    }
}

/// Policy-ordered training queries.
struct Display {
    lists: Vec<(QueryGroup, Vec<f64>)>,
}

impl Display {
    fn build(policy: &LoggingPolicy, train: &Dataset) -> Result<Self, ExperimentError> {
        let lists = train
            .groups
            .iter()
            .map(|g| policy.display(g, train.feature_dim))
            .collect::<Result<_, _>>()?;
        Ok(Self { lists })
    }
}

/// Samples the step's batch of click logs. Depends only on the seed, the step
/// and the displayed lists, never on the learner.
pub fn sample_batch(
    cfg: &ExperimentConfig,
    curve: &PositionBiasCurve,
    lists: &[(QueryGroup, Vec<f64>)],
    feature_dim: usize,
    step: usize,
) -> Result<Vec<ClickLog>, ExperimentError> {
    if lists.is_empty() {
        return Err(ExperimentError::Sampling("no training queries".into()));
    }
    let mut pick = rng_for(cfg.seed, "batch", step as u64);
    let mut clicks = rng_for(cfg.seed, "clicks", step as u64);
    (0..cfg.batch_queries)
        .map(|_| {
            let (group, scores) = &lists[pick.random_range(0..lists.len())];
            let log = sample_session_with(group, scores, feature_dim, &cfg.simulation, curve, &mut clicks)?;
            Ok(log.without_hidden())
        })
        .collect()
}

fn run_loop(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    initial: LoggingPolicy,
    refresh: bool,
) -> Result<RunResult, ExperimentError> {
    cfg.validate()?;
    if train.feature_dim != test.feature_dim {
        return Err(ExperimentError::Config(format!(
            "train width {} differs from test width {}",
            train.feature_dim, test.feature_dim
        )));
    }
    let curve = cfg.position_curve()?;
    let mut learner = Learner::new(cfg, train.feature_dim)?;
    let mut display = Display::build(&initial, train)?;
    let mut curves = Vec::new();
    let mut last_metrics = RankingMetrics::default();

    for step in 0..cfg.total_steps {
        if refresh && step > 0 && step % cfg.refresh_interval == 0 {
            display = Display::build(&LoggingPolicy::from_ranker(&learner.ranker), train)?;
        }
        let batch = sample_batch(cfg, &curve, &display.lists, train.feature_dim, step)?;
        let mut rng = rng_for(cfg.seed, "dropout", step as u64);
        learner.step(&batch, &mut rng)?;

        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.total_steps {
            last_metrics = evaluate(&learner.ranker, test, cfg.simulation.y_max)?;
            let est = learner.estimate();
            curves.push(CurveRow::new(
                done,
                cfg.algorithm.name(),
                cfg.seed,
                &last_metrics,
                normalized_propensity(est, est.len())[0],
                propensity_error(est, &curve, cfg.simulation.eta),
            ));
        }
    }
    Ok(RunResult {
        config: cfg.clone(),
        curves,
        final_metrics: last_metrics,
        final_propensity: learner.estimate().clone(),
        ranker: learner.ranker.snapshot(),
    })
}

/// Offline paradigm: one fixed policy orders every impression.
pub fn run_offline(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    policy: &LoggingPolicy,
) -> Result<RunResult, ExperimentError> {
    run_loop(cfg, train, test, policy.clone(), false)
}

/// Online deterministic paradigm starting from the untrained ranker.
pub fn run_online(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunResult, ExperimentError> {
    let initial = LoggingPolicy::from_ranker(&cfg.fresh_ranker(train.feature_dim));
    run_online_from(cfg, train, test, initial)
}

/// Online deterministic paradigm from a supplied initial policy.
pub fn run_online_from(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    initial: LoggingPolicy,
) -> Result<RunResult, ExperimentError> {
    run_loop(cfg, train, test, initial, true)
}

/// Dispatches on the paradigm. The offline weak policy is fitted on
/// `weak_fraction` of the training queries.
pub fn run(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunResult, ExperimentError> {
    match cfg.paradigm {
        Paradigm::Ond => run_online(cfg, train, test),
        Paradigm::Off => {
            let policy = train_weak_policy(train, cfg.weak_fraction, derive_seed(cfg.seed, "weak", 0))?;
            run_offline(cfg, train, test, &policy)
        }
    }
}

/// Stacked feature rows of a whole split.
pub fn split_features(dataset: &Dataset) -> Matrix {
    let mut x = Matrix::zeros((dataset.num_docs(), dataset.feature_dim));
    let mut r = 0;
    for g in &dataset.groups {
        for d in &g.docs {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(d.features.as_slice()));
            r += 1;
        }
    }
    x
}
