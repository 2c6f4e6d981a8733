use super::params::ParamStore;
use super::Matrix;

pub const DEFAULT_DAMPING: f64 = 1e-6;

/// AdaGrad with a per-parameter squared-gradient accumulator:
/// `G += g⊙g; θ -= lr · g / sqrt(G + damping)`.
#[derive(Clone, Debug)]
pub struct AdaGrad {
    pub learning_rate: f64,
    pub damping: f64,
    accum: Vec<Option<Matrix>>,
}

impl AdaGrad {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            damping: DEFAULT_DAMPING,
            accum: Vec::new(),
        }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    /// Accumulated squared gradients for parameter `index`, if it has been
    /// stepped at least once.
    pub fn accumulator(&self, index: usize) -> Option<&Matrix> {
        self.accum.get(index).and_then(Option::as_ref)
    }

    /// Applies one update to every unfrozen parameter, then clears all
    /// gradients. Frozen values and their accumulators are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.accum.len() < store.len() {
            self.accum.resize(store.len(), None);
        }
        let (lr, damping) = (self.learning_rate, self.damping);
        for (p, slot) in store.params_mut().iter_mut().zip(self.accum.iter_mut()) {
            if p.frozen {
                continue;
            }
            let g_acc = slot.get_or_insert_with(|| Matrix::zeros(p.value.raw_dim()));
            ndarray::Zip::from(&mut p.value)
                .and(g_acc)
                .and(&p.grad)
                .for_each(|theta, acc, &g| {
                    *acc += g * g;
                    if g != 0.0 {
                        *theta -= lr * g / (*acc + damping).sqrt();
                    }
                });
        }
        store.zero_grad();
    }
}
