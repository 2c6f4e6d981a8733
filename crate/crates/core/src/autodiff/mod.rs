//! Minimal reverse-mode differentiation engine.
//!
//! Only the primitives the ranking and propensity models need are provided:
//! affine layers, ELU, inverted dropout, embedding lookup, elementwise add and
//! multiply, sigmoid, mean/sum reductions and grouped softmax cross-entropy.
//! Values are dense `f64` matrices; there is no broadcasting beyond the bias
//! row of an affine layer.

mod adagrad;
mod mlp;
mod params;
mod tape;

pub use adagrad::{AdaGrad, DEFAULT_DAMPING};
pub use mlp::{glorot_uniform, mlp_forward, Linear, Mlp, Mode};
pub use params::{ParamGroup, ParamId, ParamStore, Parameter, Snapshot, TensorRecord};
pub use tape::{elu, log_softmax, sigmoid, softmax, Tape, Var};

use std::ops::Range;

use thiserror::Error;

pub type Matrix = ndarray::Array2<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("snapshot is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("snapshot decode failed: {0}")]
    Snapshot(String),
}

/// `-Σ_i softmax(target)_i · log softmax(predicted)_i`.
pub fn listwise_softmax_cross_entropy(target: &[f64], predicted: &[f64]) -> Result<f64, EngineError> {
    if target.len() != predicted.len() || target.is_empty() {
        return Err(EngineError::Shape {
            op: "listwise_softmax_cross_entropy",
            left: (target.len(), 1),
            right: (predicted.len(), 1),
        });
    }
    let t = softmax(target);
    let lp = log_softmax(predicted);
    Ok(-t.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>())
}

/// Recorded listwise cross-entropy summed over groups. `targets` holds raw
/// target scores aligned with the rows of `logits`; each group's targets are
/// softmax-normalised independently.
pub fn record_listwise_ce(
    tape: &mut Tape,
    logits: Var,
    targets: &[f64],
    groups: &[Range<usize>],
) -> Result<Var, EngineError> {
    let mut coeffs = vec![0.0; targets.len()];
    for g in groups {
        if g.end > targets.len() {
            return Err(EngineError::Index {
                index: g.end,
                len: targets.len(),
            });
        }
        let s = softmax(&targets[g.clone()]);
        coeffs[g.clone()].copy_from_slice(&s);
    }
    tape.weighted_log_softmax(logits, &coeffs, groups)
}

/// Stacks equally wide rows into a matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Matrix {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        assert_eq!(r.len(), width, "row width mismatch");
        data.extend_from_slice(r);
        n += 1;
    }
    Matrix::from_shape_vec((n, width), data).expect("row width checked")
}

/// Column vector from a slice.
pub fn column(values: &[f64]) -> Matrix {
    Matrix::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}
