//! Feed-forward stacks built from affine layers, ELU and inverted dropout.

use rand::Rng;

use super::params::{ParamGroup, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{EngineError, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, EngineError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.affine(x, w, b)
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

/// An MLP whose hidden layers use ELU followed by dropout. The last layer is
/// linear unless `activate_output` is set.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    sizes: Vec<usize>,
    dropout: f64,
    activate_output: bool,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        sizes: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear {
                weight: store.add(format!("{prefix}.{i}.weight"), group, glorot_uniform(w[0], w[1], rng)),
                bias: store.add(format!("{prefix}.{i}.bias"), group, Matrix::zeros((1, w[1]))),
            })
            .collect();
        Self {
            layers,
            sizes: sizes.to_vec(),
            dropout,
            activate_output: false,
        }
    }

    pub fn with_output_activation(mut self, on: bool) -> Self {
        self.activate_output = on;
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, EngineError> {
        mlp_forward(
            tape,
            store,
            input,
            &self.layers,
            self.dropout,
            mode,
            self.activate_output,
            rng,
        )
    }
}

/// Records `[affine → ELU → dropout]*` followed by a final affine layer.
#[allow(clippy::too_many_arguments)]
pub fn mlp_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    input: Var,
    layers: &[Linear],
    dropout_rate: f64,
    mode: Mode,
    activate_output: bool,
    rng: &mut R,
) -> Result<Var, EngineError> {
    let mut h = input;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(tape, store, h)?;
        let last = i + 1 == layers.len();
        if !last || activate_output {
            h = tape.elu(h);
        }
        if !last && mode == Mode::Train {
            h = tape.dropout(h, dropout_rate, rng);
        }
    }
    Ok(h)
}
