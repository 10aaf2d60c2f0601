//! Numerical kernel: tensors, reverse-mode autodiff, LSTM cell, AdamW and gradient checking.

mod adamw;
mod gradcheck;
mod lstm;
mod params;
mod tape;
mod tensor;

pub use adamw::{adamw_update, AdamW, AdamWConfig, AdamWState};
pub use gradcheck::{finite_diff_check, GradCheckReport, GRAD_FLOOR};
pub use lstm::{lstm_step, LstmParams};
pub use params::{Checkpoint, Grads, ParamId, ParamStore, StoredTensor, CHECKPOINT_FORMAT};
pub use tape::{log_sum_exp, sigmoid, softmax, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine map `W x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_matrix(format!("{prefix}.weight"), out_dim, in_dim, rng);
        let bias = store.add_zeros(format!("{prefix}.bias"), &[out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matvec(w, x);
        tape.add(y, b)
    }

    /// Plain-slice evaluation without a tape.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        let w = store.get(self.weight);
        let b = store.get(self.bias).data();
        (0..self.out_dim)
            .map(|i| T::dot(w.row(i), x) + b[i])
            .collect()
    }
}
