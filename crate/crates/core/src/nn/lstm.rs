use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Real;
use crate::error::{Error, Result};

/// LSTM cell parameters.
///
/// The input, forget, cell and output gate weights are stacked row-wise in
/// that order into one `[4 * hidden, input + hidden]` matrix acting on `[x; h]`,
/// with a matching `[4 * hidden]` bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_matrix(
            format!("{prefix}.weight"),
            4 * hidden_size,
            input_size + hidden_size,
            rng,
        );
        let bias = store.add_zeros(format!("{prefix}.bias"), &[4 * hidden_size]);
        Self {
            weight,
            bias,
            input_size,
            hidden_size,
        }
    }

    pub fn zero_state<T: Real>(&self, tape: &mut Tape<'_, T>) -> (Var, Var) {
        (tape.zeros(self.hidden_size), tape.zeros(self.hidden_size))
    }

    /// One cell step, returning `(h', c')`.
    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden_size;
        if tape.size(x) != self.input_size || tape.size(h) != hs || tape.size(c) != hs {
            return Err(Error::Shape(format!(
                "lstm step expects x[{}], h[{hs}], c[{hs}]; got x[{}], h[{}], c[{}]",
                self.input_size,
                tape.size(x),
                tape.size(h),
                tape.size(c)
            )));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xh = tape.concat(&[x, h]);
        let pre = tape.matvec(w, xh);
        let gates = tape.add(pre, b);
        let i = tape.slice(gates, 0, hs);
        let f = tape.slice(gates, hs, hs);
        let g = tape.slice(gates, 2 * hs, hs);
        let o = tape.slice(gates, 3 * hs, hs);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc);
        Ok((h_next, c_next))
    }

    /// Run over a sequence from a zero state, returning every hidden state.
    pub fn run<T: Real>(&self, tape: &mut Tape<'_, T>, inputs: &[Var]) -> Result<Vec<Var>> {
        let (mut h, mut c) = self.zero_state(tape);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (h2, c2) = self.step(tape, x, h, c)?;
            h = h2;
            c = c2;
            out.push(h);
        }
        Ok(out)
    }
}

/// Free-standing cell step for callers holding their own tape.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<'_, T>,
    params: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    params.step(tape, x, h, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell(d_in: usize, d_h: usize) -> (ParamStore<f64>, LstmParams) {
        let mut store = ParamStore::new();
        let weight = store.add_zeros("w", &[4 * d_h, d_in + d_h]);
        let bias = store.add_zeros("b", &[4 * d_h]);
        (
            store,
            LstmParams {
                weight,
                bias,
                input_size: d_in,
                hidden_size: d_h,
            },
        )
    }

    #[test]
    fn zero_params_give_zero_state() {
        let (store, cell) = zero_cell(3, 2);
        let mut tape = Tape::new(&store);
        let x = tape.vector(vec![1.0, -2.0, 0.5]);
        let (h, c) = cell.zero_state(&mut tape);
        let (h2, c2) = cell.step(&mut tape, x, h, c).unwrap();
        assert_eq!(tape.value(h2), &[0.0, 0.0]);
        assert_eq!(tape.value(c2), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        let (mut store, cell) = zero_cell(2, 3);
        {
            let b = store.get_mut(cell.bias).data_mut();
            for k in 0..3 {
                b[k] = -20.0; // input gate closed
                b[3 + k] = 20.0; // forget gate open
            }
        }
        let mut tape = Tape::new(&store);
        let x = tape.vector(vec![0.3, -0.7]);
        let h = tape.vector(vec![0.1, 0.2, 0.3]);
        let c = tape.vector(vec![0.9, -0.4, 2.0]);
        let (_, c2) = cell.step(&mut tape, x, h, c).unwrap();
        for (a, b) in tape.value(c2).iter().zip([0.9, -0.4, 2.0]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn step_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let cell = LstmParams::init(&mut store, "lstm", 4, 5, &mut rng);
        let run = || {
            let mut tape = Tape::new(&store);
            let x = tape.input(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
            let (h, c) = cell.zero_state(&mut tape);
            let (h2, c2) = cell.step(&mut tape, x, h, c).unwrap();
            (tape.value(h2).to_vec(), tape.value(c2).to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (store, cell) = zero_cell(3, 2);
        let mut tape = Tape::new(&store);
        let x = tape.vector(vec![1.0, 2.0]);
        let (h, c) = cell.zero_state(&mut tape);
        assert!(matches!(cell.step(&mut tape, x, h, c), Err(Error::Shape(_))));
    }
}
