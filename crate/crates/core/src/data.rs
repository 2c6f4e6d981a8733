//! Query-grouped learning-to-rank datasets: SVMlight/LETOR parsing and
//! serialisation, plus a seeded synthetic generator.
//!
//! Features are stored densely. Sparse feature ids in the input are 1-based
//! and missing ids are filled with `0.0`.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::seeding::rng_for;

/// Highest relevance grade.
pub const DEFAULT_Y_MAX: u8 = 4;

/// Fraction of documents assigned to each grade `0..=4` by the synthetic
/// generator (ascending teacher score).
pub const GRADE_PROPORTIONS: [f64; 5] = [0.30, 0.30, 0.20, 0.13, 0.07];

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: relevance label {label} outside [0, {y_max}]")]
    LabelRange { line: usize, label: i64, y_max: u8 },
    #[error("query `{query}` has duplicate document id `{doc}`")]
    DuplicateDoc { query: String, doc: String },
    #[error("feature vector has {got} values, dataset declares {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("query `{0}` has no documents")]
    EmptyGroup(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub doc_id: String,
    pub features: FeatureVector,
    pub relevance: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub query_id: String,
    pub docs: Vec<LabeledDoc>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.docs.iter().map(|d| d.relevance).collect()
    }

    /// Documents as rows of a `len x feature_dim` matrix.
    pub fn feature_matrix(&self, feature_dim: usize) -> Matrix {
        self.rows_matrix(&(0..self.docs.len()).collect::<Vec<_>>(), feature_dim)
    }

    /// Selected documents, in the given order, as matrix rows.
    pub fn rows_matrix(&self, order: &[usize], feature_dim: usize) -> Matrix {
        let mut data = Vec::with_capacity(order.len() * feature_dim);
        for &i in order {
            data.extend_from_slice(self.docs[i].features.as_slice());
        }
        Matrix::from_shape_vec((order.len(), feature_dim), data).expect("dense features")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

impl Split {
    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub feature_dim: usize,
    pub split: Split,
}

impl Dataset {
    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn num_docs(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }

    /// Checks every documented invariant.
    pub fn validate(&self, y_max: u8) -> Result<(), DataError> {
        for g in &self.groups {
            if g.docs.is_empty() {
                return Err(DataError::EmptyGroup(g.query_id.clone()));
            }
            let mut seen = HashSet::new();
            for d in &g.docs {
                if !seen.insert(d.doc_id.as_str()) {
                    return Err(DataError::DuplicateDoc {
                        query: g.query_id.clone(),
                        doc: d.doc_id.clone(),
                    });
                }
                if d.features.len() != self.feature_dim {
                    return Err(DataError::Dimension {
                        expected: self.feature_dim,
                        got: d.features.len(),
                    });
                }
                if d.relevance > y_max {
                    return Err(DataError::LabelRange {
                        line: 0,
                        label: d.relevance as i64,
                        y_max,
                    });
                }
            }
        }
        Ok(())
    }

    /// Histogram of relevance grades `0..=y_max`.
    pub fn grade_histogram(&self, y_max: u8) -> Vec<usize> {
        let mut h = vec![0; y_max as usize + 1];
        for d in self.groups.iter().flat_map(|g| &g.docs) {
            h[d.relevance as usize] += 1;
        }
        h
    }
}

fn doc_id_from_comment(comment: &str) -> Option<String> {
    let rest = comment.trim().strip_prefix("docid")?;
    let rest = rest.trim_start().strip_prefix(['=', ':'])?;
    rest.split_whitespace().next().map(str::to_owned)
}

/// Parses SVMlight/LETOR text: `<label> qid:<id> <fid>:<val> ... [# comment]`.
pub fn parse_svmlight(text: &str) -> Result<Dataset, DataError> {
    parse_svmlight_with(text, DEFAULT_Y_MAX)
}

pub fn parse_svmlight_with(text: &str, y_max: u8) -> Result<Dataset, DataError> {
    type PendingDoc = (String, Vec<(usize, f64)>, u8);
    struct Pending {
        query_id: String,
        docs: Vec<PendingDoc>,
    }
    let mut groups: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut feature_dim = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let (body, comment) = match raw.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (raw, None),
        };
        let mut tokens = body.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let perr = |message: String| DataError::Parse { line, message };

        let label: i64 = match label_tok.parse::<i64>() {
            Ok(v) => v,
            Err(_) => {
                let f: f64 = label_tok
                    .parse()
                    .map_err(|_| perr(format!("bad label `{label_tok}`")))?;
                if f.fract() != 0.0 || !f.is_finite() {
                    return Err(perr(format!("non-integer label `{label_tok}`")));
                }
                f as i64
            }
        };
        if label < 0 || label > y_max as i64 {
            return Err(DataError::LabelRange { line, label, y_max });
        }

        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| perr("expected `qid:<id>`".into()))?
            .to_owned();

        let mut feats = Vec::new();
        let mut seen = HashSet::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("bad feature `{tok}`")))?;
            let fid: usize = fid.parse().map_err(|_| perr(format!("bad feature id `{fid}`")))?;
            if fid == 0 {
                return Err(perr("feature ids are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| perr(format!("bad feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(perr(format!("non-finite feature value `{val}`")));
            }
            if !seen.insert(fid) {
                return Err(perr(format!("duplicate feature id {fid}")));
            }
            feature_dim = feature_dim.max(fid);
            feats.push((fid, val));
        }

        let slot = *index.entry(qid.clone()).or_insert_with(|| {
            groups.push(Pending {
                query_id: qid.clone(),
                docs: Vec::new(),
            });
            groups.len() - 1
        });
        let group = &mut groups[slot];
        let doc_id = comment
            .and_then(doc_id_from_comment)
            .unwrap_or_else(|| format!("{}-{}", qid, group.docs.len()));
        group.docs.push((doc_id, feats, label as u8));
    }

    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut seen = HashSet::new();
        let mut docs = Vec::with_capacity(g.docs.len());
        for (doc_id, feats, relevance) in g.docs {
            if !seen.insert(doc_id.clone()) {
                return Err(DataError::DuplicateDoc {
                    query: g.query_id.clone(),
                    doc: doc_id,
                });
            }
            let mut dense = vec![0.0; feature_dim];
            for (fid, v) in feats {
                dense[fid - 1] = v;
            }
            docs.push(LabeledDoc {
                doc_id,
                features: FeatureVector(dense),
                relevance,
            });
        }
        out.push(QueryGroup {
            query_id: g.query_id,
            docs,
        });
    }
    Ok(Dataset {
        groups: out,
        feature_dim,
        split: Split::Train,
    })
}

/// Writes every feature densely so the declared dimension survives a
/// round trip; document ids travel in a trailing `# docid = ...` comment.
pub fn to_svmlight(dataset: &Dataset) -> String {
    let mut out = String::new();
    for g in &dataset.groups {
        for d in &g.docs {
            write!(out, "{} qid:{}", d.relevance, g.query_id).unwrap();
            for (i, v) in d.features.as_slice().iter().enumerate() {
                write!(out, " {}:{}", i + 1, v).unwrap();
            }
            writeln!(out, " # docid = {}", d.doc_id).unwrap();
        }
    }
    out
}

/// Hidden teacher `t(x) = w·x + 0.5·x₀·x₁` with weights fixed by the seed.
#[derive(Clone, Debug)]
pub struct Teacher {
    weights: Vec<f64>,
}

impl Teacher {
    pub fn from_seed(seed: u64, feature_dim: usize) -> Self {
        let mut rng = rng_for(seed, "teacher", 0);
        Self {
            weights: (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let linear: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        linear + 0.5 * x[0] * x[1]
    }
}

/// Synthetic training split. Equivalent to
/// [`generate_synthetic_split`] with [`Split::Train`].
pub fn generate_synthetic(
    n_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    generate_synthetic_split(n_queries, docs_per_query, feature_dim, seed, Split::Train)
}

/// Generates one split. All splits of the same `seed` share one teacher, so
/// a model trained on `Train` is meaningfully evaluated on `Test`.
pub fn generate_synthetic_split(
    n_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset, DataError> {
    if n_queries == 0 || docs_per_query == 0 {
        return Err(DataError::InvalidArgument("counts must be positive".into()));
    }
    if feature_dim < 4 {
        return Err(DataError::InvalidArgument("feature_dim must be at least 4".into()));
    }
    let teacher = Teacher::from_seed(seed, feature_dim);
    let mut rng = rng_for(seed, "features", split.index());

    let mut features = Vec::with_capacity(n_queries * docs_per_query);
    for _ in 0..n_queries * docs_per_query {
        let x: Vec<f64> = (0..feature_dim).map(|_| rng.random::<f64>()).collect();
        features.push(x);
    }
    let scores: Vec<f64> = features.iter().map(|x| teacher.score(x)).collect();

    // quantile bucketing over the whole split
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let n = scores.len();
    let mut cutoffs = Vec::with_capacity(GRADE_PROPORTIONS.len());
    let mut cum = 0.0;
    for p in GRADE_PROPORTIONS {
        cum += p;
        cutoffs.push(((cum * n as f64).round() as usize).min(n));
    }
    *cutoffs.last_mut().unwrap() = n;
    let mut grades = vec![0u8; n];
    for (rank, &doc) in order.iter().enumerate() {
        grades[doc] = cutoffs.iter().position(|&c| rank < c).unwrap_or(4) as u8;
    }

    let prefix = match split {
        Split::Train => "tr",
        Split::Valid => "va",
        Split::Test => "te",
    };
    let mut feats = features.into_iter();
    let groups = (0..n_queries)
        .map(|q| QueryGroup {
            query_id: format!("{prefix}{q}"),
            docs: (0..docs_per_query)
                .map(|d| LabeledDoc {
                    doc_id: format!("d{d}"),
                    features: FeatureVector(feats.next().unwrap()),
                    relevance: grades[q * docs_per_query + d],
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        groups,
        feature_dim,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_line_with_gap() {
        let d = parse_svmlight("2 qid:7 1:0.5 3:1.0").unwrap();
        assert_eq!(d.groups.len(), 1);
        assert_eq!(d.groups[0].query_id, "7");
        assert_eq!(d.feature_dim, 3);
        assert_eq!(d.groups[0].docs[0].features.as_slice(), &[0.5, 0.0, 1.0]);
        assert_eq!(d.groups[0].docs[0].relevance, 2);
    }

    #[test]
    fn empty_stream_is_empty_dataset() {
        let d = parse_svmlight("").unwrap();
        assert!(d.groups.is_empty());
        assert_eq!(d.feature_dim, 0);
    }

    #[test]
    fn groups_by_qid() {
        let d = parse_svmlight("0 qid:1 1:1.0\n4 qid:1 1:2.0\n").unwrap();
        assert_eq!(d.groups.len(), 1);
        assert_eq!(d.groups[0].labels(), vec![0, 4]);
    }

    #[test]
    fn first_appearance_order_and_comments() {
        let text = "1 qid:b 1:1 # docid = x9 extra\n\n0 qid:a 2:1\n3 qid:b 1:2 #c\n";
        let d = parse_svmlight(text).unwrap();
        let ids: Vec<_> = d.groups.iter().map(|g| g.query_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(d.groups[0].docs[0].doc_id, "x9");
        assert_eq!(d.groups[0].docs[1].doc_id, "b-1");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_svmlight("1 qid:1 1:0.5\n1 1:0.5\n").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
        let err = parse_svmlight("1 qid:1 x:0.5").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse_svmlight("1 qid:1 0:0.5").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn label_out_of_range() {
        let err = parse_svmlight("0 qid:1 1:1\n5 qid:1 1:1").unwrap_err();
        assert_eq!(
            err,
            DataError::LabelRange {
                line: 2,
                label: 5,
                y_max: 4
            }
        );
        assert!(matches!(
            parse_svmlight("-1 qid:1 1:1"),
            Err(DataError::LabelRange { .. })
        ));
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let text = "1 qid:1 1:1 # docid = a\n1 qid:1 1:2 # docid = a\n";
        assert!(matches!(parse_svmlight(text), Err(DataError::DuplicateDoc { .. })));
    }

    #[test]
    fn synthetic_single_doc() {
        let d = generate_synthetic(1, 1, 4, 11).unwrap();
        assert_eq!(d.groups.len(), 1);
        assert_eq!(d.groups[0].docs.len(), 1);
        assert!(d.groups[0].docs[0].relevance <= 4);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(20, 5, 8, 3).unwrap();
        let b = generate_synthetic(20, 5, 8, 3).unwrap();
        assert_eq!(to_svmlight(&a), to_svmlight(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_covers_all_grades() {
        let d = generate_synthetic(500, 10, 16, 1).unwrap();
        let h = d.grade_histogram(DEFAULT_Y_MAX);
        assert!(h.iter().all(|&c| c > 0), "{h:?}");
        d.validate(DEFAULT_Y_MAX).unwrap();
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        assert!(generate_synthetic(0, 1, 4, 0).is_err());
        assert!(generate_synthetic(1, 1, 3, 0).is_err());
    }

    #[test]
    fn splits_share_teacher_but_not_features() {
        let tr = generate_synthetic_split(5, 4, 6, 9, Split::Train).unwrap();
        let te = generate_synthetic_split(5, 4, 6, 9, Split::Test).unwrap();
        assert_ne!(tr.groups[0].docs[0].features, te.groups[0].docs[0].features);
        assert_eq!(te.split, Split::Test);
    }
}
