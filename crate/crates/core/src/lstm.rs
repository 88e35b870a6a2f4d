//! Single LSTM layer: parameters, one-step forward, sequence forward and the
//! reverse pass over a recorded sequence.
//!
//! ```text
//! i = σ(W_ii x + b_ii + W_hi h + b_hi)
//! f = σ(W_if x + b_if + W_hf h + b_hf)
//! g = tanh(W_ig x + b_ig + W_hg h + b_hg)
//! o = σ(W_io x + b_io + W_ho h + b_ho)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Weights and biases of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `[hidden × input]`
    pub w_input: Matrix,
    /// `[hidden × hidden]`
    pub w_hidden: Matrix,
    pub b_input: Vec<f64>,
    pub b_hidden: Vec<f64>,
}

impl GateParams {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_input: Matrix::zeros(hidden_dim, input_dim),
            w_hidden: Matrix::zeros(hidden_dim, hidden_dim),
            b_input: vec![0.0; hidden_dim],
            b_hidden: vec![0.0; hidden_dim],
        }
    }

    fn random(input_dim: usize, hidden_dim: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let mut gate = Self::zeros(input_dim, hidden_dim);
        for t in gate.tensors_mut() {
            for v in t {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        gate
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w_input.as_slice(),
            self.w_hidden.as_slice(),
            &self.b_input,
            &self.b_hidden,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_input.as_mut_slice(),
            self.w_hidden.as_mut_slice(),
            &mut self.b_input,
            &mut self.b_hidden,
        ]
    }

    /// Pre-activation `W_i x + b_i + W_h h + b_h`.
    #[inline]
    fn preactivate(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        for ((o, bi), bh) in out.iter_mut().zip(&self.b_input).zip(&self.b_hidden) {
            *o = bi + bh;
        }
        self.w_input.mul_vec_add(x, out);
        self.w_hidden.mul_vec_add(h, out);
    }
}

/// Tensor names in the order [`LstmLayerParams::tensors`] yields them.
pub const TENSOR_NAMES: [&str; 16] = [
    "W_ii", "W_hi", "b_ii", "b_hi", //
    "W_if", "W_hf", "b_if", "b_hf", //
    "W_ig", "W_hg", "b_ig", "b_hg", //
    "W_io", "W_ho", "b_io", "b_ho",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    /// Candidate cell value (tanh).
    pub cell_gate: GateParams,
    pub output_gate: GateParams,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            input_gate: GateParams::zeros(input_dim, hidden_dim),
            forget_gate: GateParams::zeros(input_dim, hidden_dim),
            cell_gate: GateParams::zeros(input_dim, hidden_dim),
            output_gate: GateParams::zeros(input_dim, hidden_dim),
        }
    }

    /// Uniform in `[-1/√hidden, 1/√hidden]`.
    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            input_dim,
            hidden_dim,
            input_gate: GateParams::random(input_dim, hidden_dim, bound, rng),
            forget_gate: GateParams::random(input_dim, hidden_dim, bound, rng),
            cell_gate: GateParams::random(input_dim, hidden_dim, bound, rng),
            output_gate: GateParams::random(input_dim, hidden_dim, bound, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    fn gates(&self) -> [&GateParams; 4] {
        [
            &self.input_gate,
            &self.forget_gate,
            &self.cell_gate,
            &self.output_gate,
        ]
    }

    /// All 16 tensors, named per [`TENSOR_NAMES`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.gates().into_iter().flat_map(GateParams::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.cell_gate,
            &mut self.output_gate,
        ]
        .into_iter()
        .flat_map(GateParams::tensors_mut)
        .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self ← self + alpha · other`
    pub fn add_scaled(&mut self, other: &LstmLayerParams, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .find(|(t, _)| t.iter().any(|v| !v.is_finite()))
            .map(|(_, name)| name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Everything the reverse pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn step_unchecked(x: &[f64], state: &LstmState, p: &LstmLayerParams) -> StepRecord {
    let n = p.hidden_dim;
    let mut i = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut o = vec![0.0; n];
    p.input_gate.preactivate(x, &state.h, &mut i);
    p.forget_gate.preactivate(x, &state.h, &mut f);
    p.cell_gate.preactivate(x, &state.h, &mut g);
    p.output_gate.preactivate(x, &state.h, &mut o);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..n).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    StepRecord {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
    }
}

impl StepRecord {
    pub fn h(&self) -> Vec<f64> {
        self.o.iter().zip(&self.tanh_c).map(|(o, t)| o * t).collect()
    }

    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h(),
            c: self.c.clone(),
        }
    }
}

/// One LSTM step. Returns the new state and the record used for BPTT.
pub fn lstm_step(x: &[f64], state: &LstmState, p: &LstmLayerParams) -> Result<(LstmState, StepRecord)> {
    if x.len() != p.input_dim {
        return Err(Error::Dimension {
            context: "lstm_step input",
            expected: p.input_dim,
            actual: x.len(),
        });
    }
    if state.h.len() != p.hidden_dim || state.c.len() != p.hidden_dim {
        return Err(Error::Dimension {
            context: "lstm_step state",
            expected: p.hidden_dim,
            actual: state.h.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("lstm_step received a non-finite input".into()));
    }
    let rec = step_unchecked(x, state, p);
    Ok((rec.state(), rec))
}

/// Output of running a layer over a sequence.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    /// `[T × hidden]` hidden states.
    pub hidden: Matrix,
    pub records: Vec<StepRecord>,
    pub final_state: LstmState,
}

/// Run over every row of `inputs`, starting from `init`.
pub fn run_sequence(p: &LstmLayerParams, inputs: &Matrix, init: LstmState) -> Result<SequenceRun> {
    if inputs.cols() != p.input_dim {
        return Err(Error::Dimension {
            context: "LSTM sequence input",
            expected: p.input_dim,
            actual: inputs.cols(),
        });
    }
    if !inputs.is_finite() {
        return Err(Error::Numeric("LSTM received a non-finite input".into()));
    }
    let t_len = inputs.rows();
    let mut hidden = Matrix::zeros(t_len, p.hidden_dim);
    let mut records = Vec::with_capacity(t_len);
    let mut state = init;
    for t in 0..t_len {
        let rec = step_unchecked(inputs.row(t), &state, p);
        state = rec.state();
        hidden.row_mut(t).copy_from_slice(&state.h);
        records.push(rec);
    }
    Ok(SequenceRun {
        hidden,
        records,
        final_state: state,
    })
}

/// Reverse pass over a recorded sequence.
///
/// `d_hidden` holds ∂L/∂h_t for every step. Gradients are accumulated into
/// `grads`; the return value is ∂L/∂x_t. The incoming state gradient at the
/// end of the sequence is zero (the segment boundary stops gradient flow).
pub fn backward_sequence(
    p: &LstmLayerParams,
    records: &[StepRecord],
    d_hidden: &Matrix,
    grads: &mut LstmLayerParams,
) -> Matrix {
    let n = p.hidden_dim;
    let mut d_inputs = Matrix::zeros(records.len(), p.input_dim);
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];

    for t in (0..records.len()).rev() {
        let r = &records[t];
        let dh_ext = d_hidden.row(t);
        for j in 0..n {
            let dh = dh_ext[j] + dh_next[j];
            let d_o = dh * r.tanh_c[j];
            let dc = dc_next[j] + dh * r.o[j] * (1.0 - r.tanh_c[j] * r.tanh_c[j]);
            let d_i = dc * r.g[j];
            let d_g = dc * r.i[j];
            let d_f = dc * r.c_prev[j];
            da[0][j] = d_i * r.i[j] * (1.0 - r.i[j]);
            da[1][j] = d_f * r.f[j] * (1.0 - r.f[j]);
            da[2][j] = d_g * (1.0 - r.g[j] * r.g[j]);
            da[3][j] = d_o * r.o[j] * (1.0 - r.o[j]);
            dc_next[j] = dc * r.f[j];
        }

        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dx = d_inputs.row_mut(t);
        let grad_gates = [
            &mut grads.input_gate,
            &mut grads.forget_gate,
            &mut grads.cell_gate,
            &mut grads.output_gate,
        ];
        for ((gate, grad), d) in p.gates().into_iter().zip(grad_gates).zip(&da) {
            grad.w_input.add_outer(d, &r.x);
            grad.w_hidden.add_outer(d, &r.h_prev);
            for ((bi, bh), v) in grad.b_input.iter_mut().zip(&mut grad.b_hidden).zip(d) {
                *bi += v;
                *bh += v;
            }
            gate.w_input.tr_mul_vec_add(d, dx);
            gate.w_hidden.tr_mul_vec_add(d, &mut dh_next);
        }
    }
    d_inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_half_open_gates() {
        let p = LstmLayerParams::zeros(3, 2);
        let (s, rec) = lstm_step(&[0.3, -1.0, 2.0], &LstmState::zeros(2), &p).unwrap();
        assert_eq!(rec.i, vec![0.5, 0.5]);
        assert_eq!(rec.f, vec![0.5, 0.5]);
        assert_eq!(rec.o, vec![0.5, 0.5]);
        assert_eq!(rec.g, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(s.h, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_hold_the_cell() {
        let mut p = LstmLayerParams::zeros(1, 1);
        p.output_gate.b_input[0] = 1000.0;
        p.forget_gate.b_input[0] = 1000.0;
        p.input_gate.b_input[0] = -1000.0;
        let state = LstmState {
            h: vec![0.0],
            c: vec![1.0],
        };
        let (s, rec) = lstm_step(&[0.7], &state, &p).unwrap();
        assert!((rec.f[0] - 1.0).abs() < 1e-12);
        assert!(rec.i[0].abs() < 1e-12);
        assert!((rec.o[0] - 1.0).abs() < 1e-12);
        assert!((s.c[0] - 1.0).abs() < 1e-12);
        assert!((s.h[0] - 1f64.tanh()).abs() < 1e-12);
        assert!((s.h[0] - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn dimension_and_finiteness_checked() {
        let p = LstmLayerParams::zeros(2, 2);
        assert!(lstm_step(&[1.0], &LstmState::zeros(2), &p).is_err());
        assert!(lstm_step(&[1.0, f64::NAN], &LstmState::zeros(2), &p).is_err());
    }

    #[test]
    fn hidden_state_is_strictly_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmLayerParams::random(4, 3, &mut rng);
        let inputs = Matrix::from_fn(30, 4, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let run = run_sequence(&p, &inputs, LstmState::zeros(3)).unwrap();
        assert!(run.hidden.as_slice().iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn tensor_names_cover_every_tensor() {
        let p = LstmLayerParams::zeros(3, 2);
        assert_eq!(p.tensors().len(), TENSOR_NAMES.len());
        assert_eq!(p.parameter_count(), 4 * (2 * 3 + 2 * 2 + 2 + 2));
    }
}
