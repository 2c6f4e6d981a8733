//! Parameter storage shared by every trainable model.
//!
//! A [`ParamStore`] owns named tensors together with their gradient
//! accumulators and a frozen flag. Parameters carry a [`ParamGroup`] tag so
//! that whole partitions (for example the confounder half of the LPP model)
//! can be frozen with a single selector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EngineError, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Partition tag used by freeze selectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Ranker,
    PositionBias,
    /// Confounder encoder and shared head of the LPP model.
    Confounder,
    /// Position embedding table of the LPP model.
    PositionEncoder,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
    pub grad: Matrix,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        let grad = Matrix::zeros(value.raw_dim());
        self.params.push(Parameter {
            name: name.into(),
            group,
            value,
            grad,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Sets the frozen flag on every parameter the selector accepts.
    /// Parameters the selector rejects keep their current flag.
    pub fn freeze_parameters(&mut self, selector: impl Fn(&Parameter) -> bool) {
        for p in &mut self.params {
            if selector(p) {
                p.frozen = true;
            }
        }
    }

    pub fn unfreeze_parameters(&mut self, selector: impl Fn(&Parameter) -> bool) {
        for p in &mut self.params {
            if selector(p) {
                p.frozen = false;
            }
        }
    }

    pub fn freeze_group(&mut self, group: ParamGroup) {
        self.freeze_parameters(|p| p.group == group);
    }

    pub fn unfreeze_group(&mut self, group: ParamGroup) {
        self.unfreeze_parameters(|p| p.group == group);
    }

    pub fn group_frozen(&self, group: ParamGroup) -> bool {
        self.params.iter().filter(|p| p.group == group).all(|p| p.frozen)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix) {
        let p = &mut self.params[id.0];
        if !p.frozen {
            p.grad += g;
        }
    }

    /// Global L2 norm over the gradients of unfrozen parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| !p.frozen) {
                p.grad *= scale;
            }
        }
        norm
    }

    pub fn snapshot(&self) -> Snapshot {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let (rows, cols) = p.value.dim();
                (
                    p.name.clone(),
                    TensorRecord {
                        shape: [rows, cols],
                        data: p.value.iter().copied().collect(),
                    },
                )
            })
            .collect();
        Snapshot { tensors }
    }

    /// Overwrites parameter values from a snapshot. Every parameter must be
    /// present with a matching shape.
    pub fn load_snapshot(&mut self, snapshot: &Snapshot) -> Result<(), EngineError> {
        for p in &mut self.params {
            let rec = snapshot
                .tensors
                .get(&p.name)
                .ok_or_else(|| EngineError::MissingTensor(p.name.clone()))?;
            let (rows, cols) = p.value.dim();
            if rec.shape != [rows, cols] || rec.data.len() != rows * cols {
                return Err(EngineError::Shape {
                    op: "load_snapshot",
                    left: (rows, cols),
                    right: (rec.shape[0], rec.shape[1]),
                });
            }
            p.value = Matrix::from_shape_vec((rows, cols), rec.data.clone()).expect("shape checked above");
        }
        Ok(())
    }
}

/// Flat name → tensor map with declared shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Snapshot(e.to_string()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &Snapshot) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().all(|(name, a)| {
                other.tensors.get(name).is_some_and(|b| {
                    a.shape == b.shape
                        && a.data.len() == b.data.len()
                        && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
                })
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn freeze_selector_only_touches_selected() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Confounder, array![[1.0]]);
        let b = store.add("b", ParamGroup::PositionEncoder, array![[2.0]]);
        store.freeze_group(ParamGroup::Confounder);
        assert!(store.get(a).frozen);
        assert!(!store.get(b).frozen);
        assert!(store.group_frozen(ParamGroup::Confounder));
        store.unfreeze_group(ParamGroup::Confounder);
        assert!(!store.get(a).frozen);
    }

    #[test]
    fn frozen_params_ignore_grad_accumulation() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Ranker, array![[1.0, 2.0]]);
        store.freeze_parameters(|_| true);
        store.accumulate_grad(a, &array![[3.0, 4.0]]);
        assert_eq!(store.grad(a), &array![[0.0, 0.0]]);
    }

    #[test]
    fn snapshot_shape_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", ParamGroup::Ranker, array![[1.0, 2.0]]);
        let mut snap = store.snapshot();
        snap.tensors.get_mut("w").unwrap().shape = [2, 1];
        assert!(store.load_snapshot(&snap).is_err());
        snap.tensors.clear();
        assert!(matches!(store.load_snapshot(&snap), Err(EngineError::MissingTensor(_))));
    }

    #[test]
    fn clip_grad_norm_rescales() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Ranker, array![[0.0, 0.0]]);
        store.accumulate_grad(a, &array![[3.0, 4.0]]);
        let before = store.clip_grad_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
