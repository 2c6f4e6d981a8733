//! Exact discrete model of the ranking causal graph
//! `X → R`, `X → R̂ → K`, `K → E`, `(R, E) → C`.
//!
//! The joint over `(x, r, k, e, c)` is enumerated explicitly, which makes
//! observational and interventional queries exact. [`overestimation_report`]
//! contrasts the position-only estimand a click-driven propensity model
//! converges toward with the causal propensity `P(E=1 | do(K=k))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_X: usize = 16;
pub const MAX_POSITIONS: usize = 8;
const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("conditioning event has zero probability")]
    ZeroProbability,
    #[error("position {0} outside the model's support")]
    Position(usize),
    #[error("P(x={x}, K={k}, C) is zero: the adjustment is not identifiable from observational data")]
    NotIdentifiable { x: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCausalModel {
    pub px: Vec<f64>,
    /// `P(R=1 | x)`.
    pub pr_given_x: Vec<f64>,
    /// `P(K=k | x)`, one row per `x`, one column per position.
    pub pk_given_x: Vec<Vec<f64>>,
    /// `P(E=1 | k)`.
    pub pe_given_k: Vec<f64>,
    /// `P(C=1 | E=1, R=0)`; zero gives the noiseless rule `C = E ∧ R`.
    pub click_noise: f64,
}

fn is_prob(p: f64) -> bool {
    p.is_finite() && (0.0..=1.0).contains(&p)
}

impl ToyCausalModel {
    pub fn new(
        px: Vec<f64>,
        pr_given_x: Vec<f64>,
        pk_given_x: Vec<Vec<f64>>,
        pe_given_k: Vec<f64>,
        click_noise: f64,
    ) -> Result<Self, OracleError> {
        let m = Self {
            px,
            pr_given_x,
            pk_given_x,
            pe_given_k,
            click_noise,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |s: &str| Err(OracleError::InvalidModel(s.to_owned()));
        let nx = self.px.len();
        let nk = self.pe_given_k.len();
        if nx == 0 || nx > MAX_X {
            return bad("|X| must lie in 1..=16");
        }
        if nk == 0 || nk > MAX_POSITIONS {
            return bad("number of positions must lie in 1..=8");
        }
        if self.pr_given_x.len() != nx || self.pk_given_x.len() != nx {
            return bad("every x needs a relevance and a policy row");
        }
        if !self.px.iter().all(|&p| is_prob(p)) || (self.px.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
            return bad("P(X) must be a distribution");
        }
        for row in &self.pk_given_x {
            if row.len() != nk || !row.iter().all(|&p| is_prob(p)) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                return bad("every P(K | x) row must be a distribution over the positions");
            }
        }
        if !self.pr_given_x.iter().chain(&self.pe_given_k).all(|&p| is_prob(p)) || !is_prob(self.click_noise) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    /// Two document types, a strong policy and two positions:
    /// `X ∈ {a, b}` uniform, `P(R=1|a)=0.9`, `P(R=1|b)=0.2`,
    /// `P(K=1|a)=0.9`, `P(K=1|b)=0.1`, `P(E=1|K)=(1.0, 0.5)`.
    pub fn reference_strong() -> Self {
        Self::reference_with_policy(0.9, 0.1)
    }

    /// Same as [`Self::reference_strong`] with a position-blind policy.
    pub fn reference_weak() -> Self {
        Self::reference_with_policy(0.5, 0.5)
    }

    fn reference_with_policy(top_a: f64, top_b: f64) -> Self {
        Self {
            px: vec![0.5, 0.5],
            pr_given_x: vec![0.9, 0.2],
            pk_given_x: vec![vec![top_a, 1.0 - top_a], vec![top_b, 1.0 - top_b]],
            pe_given_k: vec![1.0, 0.5],
            click_noise: 0.0,
        }
    }

    /// Strictly positive random CPTs.
    pub fn random<R: Rng + ?Sized>(nx: usize, nk: usize, click_noise: f64, rng: &mut R) -> Self {
        let dist = |n: usize, rng: &mut R| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let px = dist(nx, rng);
        let pk_given_x = (0..nx).map(|_| dist(nk, rng)).collect();
        let pr_given_x = (0..nx).map(|_| rng.random_range(0.02..0.98)).collect();
        let pe_given_k = (0..nk).map(|_| rng.random_range(0.02..1.0)).collect();
        Self {
            px,
            pr_given_x,
            pk_given_x,
            pe_given_k,
            click_noise,
        }
    }

    pub fn num_x(&self) -> usize {
        self.px.len()
    }

    pub fn num_positions(&self) -> usize {
        self.pe_given_k.len()
    }

    /// The mutilated model where every `x` is placed at position `k`.
    pub fn intervene(&self, k: usize) -> Result<Self, OracleError> {
        let nk = self.num_positions();
        if k == 0 || k > nk {
            return Err(OracleError::Position(k));
        }
        let mut m = self.clone();
        for row in &mut m.pk_given_x {
            row.iter_mut()
                .enumerate()
                .for_each(|(i, p)| *p = if i + 1 == k { 1.0 } else { 0.0 });
        }
        Ok(m)
    }

    /// `P(C=1 | E=1, x)`: what a fully examined user would click.
    pub fn click_given_examined(&self, x: usize) -> f64 {
        let r = self.pr_given_x[x];
        r + (1.0 - r) * self.click_noise
    }

    fn p_click(&self, e: bool, r: bool) -> f64 {
        match (e, r) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => self.click_noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub x: usize,
    pub r: bool,
    /// 1-based position.
    pub k: usize,
    pub e: bool,
    pub c: bool,
}

/// Conjunction of variable constraints; unset fields are unconstrained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Event {
    pub x: Option<usize>,
    pub r: Option<bool>,
    pub k: Option<usize>,
    pub e: Option<bool>,
    pub c: Option<bool>,
}

impl Event {
    pub fn any() -> Self {
        Self::default()
    }
    pub fn x(mut self, v: usize) -> Self {
        self.x = Some(v);
        self
    }
    pub fn r(mut self, v: bool) -> Self {
        self.r = Some(v);
        self
    }
    pub fn k(mut self, v: usize) -> Self {
        self.k = Some(v);
        self
    }
    pub fn e(mut self, v: bool) -> Self {
        self.e = Some(v);
        self
    }
    pub fn c(mut self, v: bool) -> Self {
        self.c = Some(v);
        self
    }

    pub fn matches(&self, a: &Assignment) -> bool {
        self.x.is_none_or(|v| v == a.x)
            && self.r.is_none_or(|v| v == a.r)
            && self.k.is_none_or(|v| v == a.k)
            && self.e.is_none_or(|v| v == a.e)
            && self.c.is_none_or(|v| v == a.c)
    }

    /// Intersection of two events; `None` when they conflict.
    pub fn and(&self, other: &Event) -> Option<Event> {
        fn merge<T: PartialEq + Copy>(a: Option<T>, b: Option<T>) -> Result<Option<T>, ()> {
            match (a, b) {
                (Some(x), Some(y)) if x != y => Err(()),
                (Some(x), _) | (None, Some(x)) => Ok(Some(x)),
                (None, None) => Ok(None),
            }
        }
        Some(Event {
            x: merge(self.x, other.x).ok()?,
            r: merge(self.r, other.r).ok()?,
            k: merge(self.k, other.k).ok()?,
            e: merge(self.e, other.e).ok()?,
            c: merge(self.c, other.c).ok()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct JointTable {
    entries: Vec<(Assignment, f64)>,
}

impl JointTable {
    pub fn entries(&self) -> &[(Assignment, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, event: &Event) -> f64 {
        self.entries
            .iter()
            .filter(|(a, _)| event.matches(a))
            .map(|(_, p)| p)
            .sum()
    }
}

/// `P(x,r,k,e,c) = P(x)·P(r|x)·P(k|x)·P(e|k)·P(c|e,r)` over every assignment.
pub fn enumerate_joint(model: &ToyCausalModel) -> JointTable {
    let mut entries = Vec::with_capacity(model.num_x() * model.num_positions() * 8);
    for (x, &px) in model.px.iter().enumerate() {
        for r in [false, true] {
            let pr = if r {
                model.pr_given_x[x]
            } else {
                1.0 - model.pr_given_x[x]
            };
            for (ki, &pk) in model.pk_given_x[x].iter().enumerate() {
                for e in [false, true] {
                    let pe = if e {
                        model.pe_given_k[ki]
                    } else {
                        1.0 - model.pe_given_k[ki]
                    };
                    for c in [false, true] {
                        let pc1 = model.p_click(e, r);
                        let pc = if c { pc1 } else { 1.0 - pc1 };
                        let a = Assignment { x, r, k: ki + 1, e, c };
                        entries.push((a, px * pr * pk * pe * pc));
                    }
                }
            }
        }
    }
    JointTable { entries }
}

/// `P(target | given)` as a ratio of marginal sums.
pub fn conditional(table: &JointTable, target: &Event, given: &Event) -> Result<f64, OracleError> {
    let pg = table.prob(given);
    if pg <= 0.0 {
        return Err(OracleError::ZeroProbability);
    }
    let joint = target.and(given).map_or(0.0, |ev| table.prob(&ev));
    Ok(joint / pg)
}

/// `P(target | do(K=k), given)`: cut the policy edge, place every document at
/// `k`, re-enumerate and condition.
pub fn interventional(model: &ToyCausalModel, do_k: usize, target: &Event, given: &Event) -> Result<f64, OracleError> {
    let mutilated = model.intervene(do_k)?;
    let table = enumerate_joint(&mutilated);
    conditional(&table, target, &given.k(do_k))
}

/// `Σ_x P(E=e | x, K=k, C=c) · P(x | K=k, C=c)` on the observational joint.
pub fn total_probability_decomposition(
    table: &JointTable,
    num_x: usize,
    k: usize,
    e: bool,
    c: bool,
) -> Result<f64, OracleError> {
    let given = Event::any().k(k).c(c);
    let mut sum = 0.0;
    for x in 0..num_x {
        let px = conditional(table, &Event::any().x(x), &given)?;
        if px == 0.0 {
            continue;
        }
        sum += conditional(table, &Event::any().e(e), &given.x(x))? * px;
    }
    Ok(sum)
}

/// Backdoor sum `Σ_x P(E=e | x, K=k, C=c) · P(x | C=c)`, with the first factor
/// read off the observational joint and the prior over `x` taken in the
/// mutilated graph where `K` no longer depends on `x`.
pub fn backdoor_sum(model: &ToyCausalModel, k: usize, e: bool, c: bool) -> Result<f64, OracleError> {
    let observed = enumerate_joint(model);
    let mutilated = enumerate_joint(&model.intervene(k)?);
    let mut sum = 0.0;
    for x in 0..model.num_x() {
        let prior = conditional(&mutilated, &Event::any().x(x), &Event::any().c(c))?;
        if prior == 0.0 {
            continue;
        }
        let cond = Event::any().x(x).k(k).c(c);
        if observed.prob(&cond) <= 0.0 {
            return Err(OracleError::NotIdentifiable { x, k });
        }
        sum += conditional(&observed, &Event::any().e(e), &cond)? * prior;
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverestimationRow {
    pub position: usize,
    /// Observed click-through rate `P(C=1 | K=k)`.
    pub ctr: f64,
    /// CTR divided by the marginal click-worthiness `E_x[P(C=1 | E=1, x)]`.
    pub position_only: f64,
    /// `P(E=1 | do(K=k))`.
    pub causal: f64,
    /// `position_only / causal`.
    pub overestimation: f64,
    pub position_only_normalized: f64,
    pub causal_normalized: f64,
}

/// Per-position comparison of the position-only estimand with the causal
/// propensity. Normalised columns are relative to the last position.
pub fn overestimation_report(model: &ToyCausalModel) -> Result<Vec<OverestimationRow>, OracleError> {
    model.validate()?;
    let table = enumerate_joint(model);
    let marginal_rel: f64 = (0..model.num_x())
        .map(|x| model.px[x] * model.click_given_examined(x))
        .sum();
    if marginal_rel <= 0.0 {
        return Err(OracleError::ZeroProbability);
    }
    let n = model.num_positions();
    let mut rows = Vec::with_capacity(n);
    for k in 1..=n {
        let ctr = conditional(&table, &Event::any().c(true), &Event::any().k(k))?;
        let causal = interventional(model, k, &Event::any().e(true), &Event::any())?;
        let position_only = ctr / marginal_rel;
        rows.push(OverestimationRow {
            position: k,
            ctr,
            position_only,
            causal,
            overestimation: position_only / causal,
            position_only_normalized: 0.0,
            causal_normalized: 0.0,
        });
    }
    let (last_pos, last_causal) = (rows[n - 1].position_only, rows[n - 1].causal);
    for r in &mut rows {
        r.position_only_normalized = r.position_only / last_pos;
        r.causal_normalized = r.causal / last_causal;
    }
    Ok(rows)
}

pub fn render_report_table(rows: &[OverestimationRow]) -> String {
    let mut out = format!(
        "{:>8} {:>10} {:>14} {:>10} {:>14} {:>12} {:>12}\n",
        "position", "ctr", "position_only", "causal", "overestimation", "norm_pos", "norm_causal"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>8} {:>10.6} {:>14.6} {:>10.6} {:>14.6} {:>12.6} {:>12.6}\n",
            r.position,
            r.ctr,
            r.position_only,
            r.causal,
            r.overestimation,
            r.position_only_normalized,
            r.causal_normalized
        ));
    }
    out
}

pub fn render_report_csv(rows: &[OverestimationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_model_has_single_atom() {
        let m = ToyCausalModel::new(vec![1.0], vec![1.0], vec![vec![1.0, 0.0]], vec![1.0, 1.0], 0.0).unwrap();
        let t = enumerate_joint(&m);
        let atoms: Vec<_> = t.entries().iter().filter(|(_, p)| *p > 0.0).collect();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].1, 1.0);
        assert_eq!(
            atoms[0].0,
            Assignment {
                x: 0,
                r: true,
                k: 1,
                e: true,
                c: true
            }
        );
    }

    #[test]
    fn table_normalises_and_marginalises() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ToyCausalModel::random(5, 4, 0.1, &mut rng);
        m.validate().unwrap();
        let t = enumerate_joint(&m);
        assert!((t.total() - 1.0).abs() < 1e-12);
        for k in 1..=4 {
            let expected: f64 = (0..5).map(|x| m.px[x] * m.pk_given_x[x][k - 1]).sum();
            assert!((t.prob(&Event::any().k(k)) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn click_forces_examination() {
        let t = enumerate_joint(&ToyCausalModel::reference_strong());
        let p = conditional(&t, &Event::any().e(true), &Event::any().c(true)).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_assignment_conditionals_are_degenerate() {
        let t = enumerate_joint(&ToyCausalModel::reference_strong());
        let given = Event::any().x(0).r(true).k(1).e(true).c(true);
        assert_eq!(conditional(&t, &given, &given).unwrap(), 1.0);
        let other = Event::any().c(false);
        assert_eq!(conditional(&t, &other, &given).unwrap(), 0.0);
    }

    #[test]
    fn reference_relevance_at_top() {
        let t = enumerate_joint(&ToyCausalModel::reference_strong());
        let p = conditional(&t, &Event::any().r(true), &Event::any().k(1)).unwrap();
        assert!((p - 0.83).abs() < 1e-12);
    }

    #[test]
    fn reference_intervention_top_is_certain() {
        let m = ToyCausalModel::reference_strong();
        let p = interventional(&m, 1, &Event::any().e(true), &Event::any()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_conditioning_errors() {
        let m = ToyCausalModel::new(vec![1.0], vec![0.0], vec![vec![1.0]], vec![1.0], 0.0).unwrap();
        let t = enumerate_joint(&m);
        assert_eq!(
            conditional(&t, &Event::any().e(true), &Event::any().c(true)),
            Err(OracleError::ZeroProbability)
        );
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ToyCausalModel::new(vec![0.5], vec![0.5], vec![vec![1.0]], vec![1.0], 0.0).is_err());
        assert!(ToyCausalModel::new(vec![1.0], vec![0.5], vec![vec![0.5]], vec![1.0], 0.0).is_err());
        assert!(ToyCausalModel::new(vec![1.0], vec![1.5], vec![vec![1.0]], vec![1.0], 0.0).is_err());
        let mut too_many = ToyCausalModel::reference_strong();
        too_many.px = vec![1.0 / 17.0; 17];
        assert!(too_many.validate().is_err());
        assert!(ToyCausalModel::reference_strong().intervene(3).is_err());
    }
}
