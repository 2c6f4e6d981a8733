//! Recording context for reverse-mode differentiation.
//!
//! Every node holds a dense `rows x cols` value. Operations append nodes in
//! evaluation order, so the node vector is already topologically sorted and
//! the backward pass is a single reverse sweep.

use std::ops::Range;

use ndarray::{Axis, Zip};
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::{EngineError, Matrix};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Dropout {
        a: Var,
        mask: Matrix,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    /// `-sum_i coeff_i * log softmax_g(z)_i` over row groups of a column vector.
    WeightedLogSoftmax {
        logits: Var,
        coeffs: Vec<f64>,
        groups: Vec<Range<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), EngineError> {
    if a.dim() != b.dim() {
        return Err(EngineError::Shape {
            op,
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log softmax` of a slice.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Column `0` of a node as a plain vector.
    pub fn column(&self, v: Var) -> Vec<f64> {
        self.nodes[v.0].value.column(0).to_vec()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// `x · w + b` with `x: n×in`, `w: in×out`, `b: 1×out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, EngineError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.nrows() {
            return Err(EngineError::Shape {
                op: "affine",
                left: xv.dim(),
                right: wv.dim(),
            });
        }
        if bv.dim() != (1, wv.ncols()) {
            return Err(EngineError::Shape {
                op: "affine bias",
                left: wv.dim(),
                right: bv.dim(),
            });
        }
        let out = xv.dot(wv) + bv;
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(elu);
        self.push(out, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Inverted dropout. A zero rate records nothing and returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let mask = self
            .value(a)
            .mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let out = self.value(a) * &mask;
        self.push(out, Op::Dropout { a, mask })
    }

    /// Embedding lookup: row `rows[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var, EngineError> {
        let t = self.value(table);
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.nrows()) {
            return Err(EngineError::Index {
                index: bad,
                len: t.nrows(),
            });
        }
        let out = t.select(Axis(0), rows);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len().max(1) as f64;
        self.push(Matrix::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::from_elem((1, 1), s), Op::Sum(a))
    }

    /// `-Σ_g Σ_{i∈g} coeffs[i] · log softmax_g(logits)[i]` where each group is a
    /// contiguous row range of the `n×1` logits column.
    pub fn weighted_log_softmax(
        &mut self,
        logits: Var,
        coeffs: &[f64],
        groups: &[Range<usize>],
    ) -> Result<Var, EngineError> {
        let z = self.value(logits);
        if z.ncols() != 1 || z.nrows() != coeffs.len() {
            return Err(EngineError::Shape {
                op: "weighted_log_softmax",
                left: z.dim(),
                right: (coeffs.len(), 1),
            });
        }
        let col = z.column(0).to_vec();
        let mut total = 0.0;
        for g in groups {
            if g.end > col.len() || g.is_empty() {
                return Err(EngineError::Index {
                    index: g.end,
                    len: col.len(),
                });
            }
            let ls = log_softmax(&col[g.clone()]);
            for (c, l) in coeffs[g.clone()].iter().zip(&ls) {
                if *c != 0.0 {
                    total -= c * l;
                }
            }
        }
        Ok(self.push(
            Matrix::from_elem((1, 1), total),
            Op::WeightedLogSoftmax {
                logits,
                coeffs: coeffs.to_vec(),
                groups: groups.to_vec(),
            },
        ))
    }

    /// Propagates `d loss / d node` back to every parameter leaf, accumulating
    /// into the store's gradient buffers. Frozen parameters are skipped.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), EngineError> {
        if self.value(loss).dim() != (1, 1) {
            return Err(EngineError::NotScalar(self.value(loss).dim()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if id.0 >= store.len() {
                        return Err(EngineError::Index {
                            index: id.0,
                            len: store.len(),
                        });
                    }
                    store.accumulate_grad(*id, &g);
                }
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *w, xv.t().dot(&g));
                    acc(&mut grads, *x, g.dot(&wv.t()));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Elu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .and(&node.value)
                        .for_each(|gi, &x, &y| {
                            if x <= 0.0 {
                                *gi *= y + 1.0;
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|gi, &s| {
                        *gi *= s * (1.0 - s);
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Dropout { a, mask } => acc(&mut grads, *a, g * mask),
                Op::Gather { table, rows } => {
                    let mut gt = Matrix::zeros(self.value(*table).raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let n = v.len().max(1) as f64;
                    acc(&mut grads, *a, Matrix::from_elem(v.raw_dim(), g[[0, 0]] / n));
                }
                Op::Sum(a) => {
                    let v = self.value(*a);
                    acc(&mut grads, *a, Matrix::from_elem(v.raw_dim(), g[[0, 0]]));
                }
                Op::WeightedLogSoftmax { logits, coeffs, groups } => {
                    let z = self.value(*logits);
                    let col = z.column(0).to_vec();
                    let mut gz = Matrix::zeros(z.raw_dim());
                    let upstream = g[[0, 0]];
                    for grp in groups {
                        let total: f64 = coeffs[grp.clone()].iter().sum();
                        if total == 0.0 {
                            continue;
                        }
                        let s = softmax(&col[grp.clone()]);
                        for (j, i) in grp.clone().enumerate() {
                            gz[[i, 0]] += upstream * (total * s[j] - coeffs[i]);
                        }
                    }
                    acc(&mut grads, *logits, gz);
                }
            }
        }
        Ok(())
    }
}
