//! Reconstruction losses, backpropagation through time, SGD and the greedy
//! layer-wise schedule.
//!
//! Training proceeds in `stages + 1` phases. Phase `k < stages` trains
//! sub-autoencoder `k` alone to reconstruct the (ReLU) encoding produced by the
//! already-trained stages `0..k`. The last phase fine-tunes the whole stack
//! end to end. Each phase has its own epoch budget, learning rate and, when
//! the dynamically weighted loss is on, its own `c`.
//!
//! Long flights are cut into segments of `bptt_window` frames. LSTM state is
//! carried from one segment to the next, gradients are not, and one SGD step
//! is taken per segment.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::autoencoder::{ChainTrace, LayerId, Link, StackedAutoencoder};
use crate::error::{Error, Result};
use crate::lstm::{backward_sequence, LstmLayerParams, LstmState, TENSOR_NAMES};
use crate::matrix::{mean_std, Matrix};

pub const STATS_KIND: &str = "train_loss_stats";
pub const STATS_FORMAT_VERSION: u32 = 1;

/// Mean squared error `(1/n) Σ (xᵢ − yᵢ)²`.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            context: "mse",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Data("mse of empty vectors".into()));
    }
    let sum: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Piecewise weight of one absolute error: `e/2` when `e ≤ c`, else `e`.
#[inline]
pub fn weight_of(e: f64, c: f64) -> f64 {
    if e <= c {
        e / 2.0
    } else {
        e
    }
}

/// Per-element weights `D` for `|x_r − x_i|`.
pub fn weight_factor(x_i: &[f64], x_r: &[f64], c: f64) -> Vec<f64> {
    x_i.iter()
        .zip(x_r)
        .map(|(a, b)| weight_of((b - a).abs(), c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightedLossConfig {
    pub enabled: bool,
    /// One `c` per training phase.
    pub c_per_stage: Vec<f64>,
}

impl Default for WeightedLossConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            c_per_stage: vec![0.5, 0.12, 0.02, 0.8],
        }
    }
}

impl WeightedLossConfig {
    pub fn validate(&self, phases: usize) -> Result<()> {
        if self.c_per_stage.len() != phases {
            return Err(Error::Config(format!(
                "weighted_loss.c_per_stage needs {phases} values, got {}",
                self.c_per_stage.len()
            )));
        }
        if self.c_per_stage.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("weighted_loss.c_per_stage values must be > 0".into()));
        }
        Ok(())
    }

    /// `c` used in `phase`, or `None` for plain MSE.
    pub fn c_for(&self, phase: usize) -> Option<f64> {
        self.enabled.then(|| self.c_per_stage[phase])
    }
}

/// Mean over elements of `D·e²`; plain MSE when weighting is disabled.
pub fn weighted_loss(x_i: &[f64], x_r: &[f64], cfg: &WeightedLossConfig, stage: usize) -> Result<f64> {
    match cfg.c_for(stage) {
        None => mse(x_i, x_r),
        Some(c) => {
            if x_i.len() != x_r.len() {
                return Err(Error::Dimension {
                    context: "weighted loss",
                    expected: x_i.len(),
                    actual: x_r.len(),
                });
            }
            if x_i.is_empty() {
                return Err(Error::Data("weighted loss of empty vectors".into()));
            }
            let sum: f64 = x_i
                .iter()
                .zip(x_r)
                .map(|(a, b)| {
                    let e = (b - a).abs();
                    weight_of(e, c) * e * e
                })
                .sum();
            Ok(sum / x_i.len() as f64)
        }
    }
}

/// Weight matrix `D` for a whole segment.
pub fn segment_weights(target: &Matrix, output: &Matrix, c: f64) -> Matrix {
    let mut w = Matrix::zeros(target.rows(), target.cols());
    for ((d, t), y) in w
        .as_mut_slice()
        .iter_mut()
        .zip(target.as_slice())
        .zip(output.as_slice())
    {
        *d = weight_of((y - t).abs(), c);
    }
    w
}

/// Segment objective `(1/(T·n)) Σ D·e²`, with `D ≡ 1` when `weights` is `None`.
pub fn segment_loss(target: &Matrix, output: &Matrix, weights: Option<&Matrix>) -> f64 {
    let n = target.as_slice().len() as f64;
    let sum: f64 = match weights {
        None => target
            .as_slice()
            .iter()
            .zip(output.as_slice())
            .map(|(t, y)| (y - t) * (y - t))
            .sum(),
        Some(w) => target
            .as_slice()
            .iter()
            .zip(output.as_slice())
            .zip(w.as_slice())
            .map(|((t, y), d)| d * (y - t) * (y - t))
            .sum(),
    };
    sum / n
}

/// Gradients for every LSTM link of a chain, in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(LayerId, LstmLayerParams)>,
}

impl Gradients {
    pub fn scale(&mut self, alpha: f64) {
        for (_, g) in &mut self.layers {
            g.scale(alpha);
        }
    }

    pub fn get(&self, id: LayerId) -> Option<&LstmLayerParams> {
        self.layers.iter().find(|(l, _)| *l == id).map(|(_, g)| g)
    }
}

/// Result of one forward/backward pass over a segment.
#[derive(Debug, Clone)]
pub struct SegmentPass {
    pub loss: f64,
    pub grads: Gradients,
    pub trace: ChainTrace,
    /// Frozen `D` used for the loss, when weighting is on.
    pub weights: Option<Matrix>,
}

impl SegmentPass {
    pub fn final_states(&self) -> Vec<LstmState> {
        self.trace.final_states()
    }
}

/// Exact reverse-mode gradients of the segment objective.
///
/// The piecewise weight `D` is evaluated once from the forward pass and held
/// constant while differentiating.
pub fn backprop_through_time(
    stack: &StackedAutoencoder,
    chain: &[Link],
    input: &Matrix,
    target: &Matrix,
    init: Vec<LstmState>,
    weight_c: Option<f64>,
) -> Result<SegmentPass> {
    let trace = stack.run_chain(chain, input, init)?;
    let weights = match weight_c {
        Some(c) => {
            check_target(trace.output(), target)?;
            Some(segment_weights(target, trace.output(), c))
        }
        None => None,
    };
    backward_from_trace(stack, chain, trace, target, weights)
}

/// Gradients of `(1/(T·n)) Σ D·e²` for caller-supplied constant weights.
pub fn backprop_with_weights(
    stack: &StackedAutoencoder,
    chain: &[Link],
    input: &Matrix,
    target: &Matrix,
    init: Vec<LstmState>,
    weights: Option<Matrix>,
) -> Result<SegmentPass> {
    let trace = stack.run_chain(chain, input, init)?;
    backward_from_trace(stack, chain, trace, target, weights)
}

fn check_target(output: &Matrix, target: &Matrix) -> Result<()> {
    if output.rows() != target.rows() || output.cols() != target.cols() {
        return Err(Error::Dimension {
            context: "segment target",
            expected: output.rows() * output.cols(),
            actual: target.rows() * target.cols(),
        });
    }
    Ok(())
}

fn backward_from_trace(
    stack: &StackedAutoencoder,
    chain: &[Link],
    trace: ChainTrace,
    target: &Matrix,
    weights: Option<Matrix>,
) -> Result<SegmentPass> {
    let output = trace.output();
    check_target(output, target)?;
    if let Some(w) = &weights {
        check_target(w, target)?;
    }
    let loss = segment_loss(target, output, weights.as_ref());

    let scale = 2.0 / target.as_slice().len() as f64;
    let mut d = Matrix::zeros(output.rows(), output.cols());
    for (i, g) in d.as_mut_slice().iter_mut().enumerate() {
        let diff = output.as_slice()[i] - target.as_slice()[i];
        let w = weights.as_ref().map_or(1.0, |w| w.as_slice()[i]);
        *g = scale * w * diff;
    }

    let mut layers: Vec<(LayerId, LstmLayerParams)> = Vec::new();
    let mut run_idx = trace.runs.len();
    for (pos, link) in chain.iter().enumerate().rev() {
        match link {
            Link::Relu => {
                let pre = &trace.activations[pos];
                for (g, x) in d.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if *x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Link::Lstm(id) => {
                run_idx -= 1;
                let params = stack.layer(*id);
                let mut grads = params.zeros_like();
                d = backward_sequence(params, &trace.runs[run_idx].records, &d, &mut grads);
                if let Some(tensor) = grads.first_non_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient in {id}.{tensor}")));
                }
                layers.push((*id, grads));
            }
        }
    }
    layers.reverse();
    Ok(SegmentPass {
        loss,
        grads: Gradients { layers },
        trace,
        weights,
    })
}

/// `p ← p − lr·g`
pub fn sgd_step(params: &mut LstmLayerParams, grads: &LstmLayerParams, lr: f64) {
    params.add_scaled(grads, -lr);
}

fn apply_gradients(stack: &mut StackedAutoencoder, grads: &Gradients, lr: f64) {
    for (id, g) in &grads.layers {
        sgd_step(stack.layer_mut(*id), g, lr);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    /// Epochs per phase; the last entry is the fine-tuning phase.
    pub stage_epochs: Vec<usize>,
    pub stage_learning_rates: Vec<f64>,
    pub seed: u64,
    pub bptt_window: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            stage_epochs: vec![5000, 5000, 5000, 2000],
            stage_learning_rates: vec![1e-3, 1e-3, 1e-3, 1e-4],
            seed: 0,
            bptt_window: 50,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self, phases: usize) -> Result<()> {
        if self.stage_epochs.len() != phases || self.stage_learning_rates.len() != phases {
            return Err(Error::Config(format!(
                "training schedule needs {phases} epochs and learning rates"
            )));
        }
        if self.stage_epochs.iter().any(|&e| e == 0) {
            return Err(Error::Config("training.stage_epochs must be > 0".into()));
        }
        if self.stage_learning_rates.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::Config("training learning rates must be > 0".into()));
        }
        let fine = self.stage_learning_rates[phases - 1];
        if self.stage_learning_rates[..phases - 1].iter().any(|&lr| fine >= lr) {
            return Err(Error::Config(
                "fine-tuning learning rate must be below every greedy-phase rate".into(),
            ));
        }
        if self.bptt_window == 0 {
            return Err(Error::Config("training.bptt_window must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightLossTrace {
    pub flight_id: String,
    pub losses: Vec<f64>,
}

/// Per-frame reconstruction losses of the final model on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLossStats {
    pub mean: f64,
    pub std: f64,
    pub traces: Vec<FlightLossTrace>,
}

impl TrainLossStats {
    pub fn from_traces(traces: Vec<FlightLossTrace>) -> Self {
        let all: Vec<f64> = traces.iter().flat_map(|t| t.losses.iter().copied()).collect();
        let (mean, std) = mean_std(&all);
        Self { mean, std, traces }
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        artifact::save(path, STATS_KIND, STATS_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        artifact::load(path, STATS_KIND, STATS_FORMAT_VERSION)
    }
}

/// Plain per-frame MSE between each input row and its full-stack reconstruction.
pub fn per_frame_losses(stack: &StackedAutoencoder, frames: &Matrix) -> Result<Vec<f64>> {
    let (recon, _) = stack.forward_stack(frames)?;
    frames
        .iter_rows()
        .zip(recon.iter_rows())
        .map(|(x, y)| mse(x, y))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based phase number.
    pub phase: usize,
    /// 1-based epoch within the phase.
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn write_history_csv(history: &[EpochLoss], path: &Path) -> Result<()> {
    let mut out = String::from("phase,epoch,mean_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.phase, h.epoch, h.mean_loss));
    }
    artifact::write_atomic(path, out.as_bytes())
}

/// A training sequence (one flight).
#[derive(Debug, Clone)]
pub struct TrainingFlight {
    pub flight_id: String,
    pub frames: Matrix,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stack: StackedAutoencoder,
    pub stats: TrainLossStats,
    pub history: Vec<EpochLoss>,
}

/// Train `stack` with the greedy layer-wise schedule followed by fine-tuning.
pub fn train_greedy(
    stack: StackedAutoencoder,
    flights: &[TrainingFlight],
    schedule: &TrainingSchedule,
    loss_cfg: &WeightedLossConfig,
) -> Result<TrainOutcome> {
    train_greedy_with(stack, flights, schedule, loss_cfg, |_| {})
}

/// As [`train_greedy`], reporting every finished epoch to `on_epoch`.
pub fn train_greedy_with(
    mut stack: StackedAutoencoder,
    flights: &[TrainingFlight],
    schedule: &TrainingSchedule,
    loss_cfg: &WeightedLossConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    let n_stages = stack.stages.len();
    let phases = n_stages + 1;
    schedule.validate(phases)?;
    loss_cfg.validate(phases)?;
    if flights.is_empty() {
        return Err(Error::Data("no training flights".into()));
    }
    for f in flights {
        if f.frames.cols() != stack.input_dim() {
            return Err(Error::Dimension {
                context: "training flight width",
                expected: stack.input_dim(),
                actual: f.frames.cols(),
            });
        }
        if f.frames.rows() == 0 {
            return Err(Error::Data(format!("training flight {} is empty", f.flight_id)));
        }
    }

    let mut history = Vec::new();
    for phase in 0..phases {
        let chain = if phase < n_stages {
            stack.stage_chain(phase)
        } else {
            stack.full_chain()
        };
        let inputs: Vec<Matrix> = if phase < n_stages {
            flights
                .iter()
                .map(|f| stack.encode_through(&f.frames, phase))
                .collect::<Result<_>>()?
        } else {
            flights.iter().map(|f| f.frames.clone()).collect()
        };
        let lr = schedule.stage_learning_rates[phase];
        let c = loss_cfg.c_for(phase);
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ ((phase as u64 + 1) << 32));
        let mut order: Vec<usize> = (0..inputs.len()).collect();

        for epoch in 0..schedule.stage_epochs[phase] {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut frames_seen = 0usize;
            for &fi in &order {
                let seq = &inputs[fi];
                let mut states = stack.zero_states(&chain);
                let mut start = 0;
                while start < seq.rows() {
                    let end = (start + schedule.bptt_window).min(seq.rows());
                    let segment = slice_rows(seq, start, end);
                    let pass = backprop_through_time(&stack, &chain, &segment, &segment, states, c)
                        .map_err(|e| e.context(format!("phase {} epoch {}", phase + 1, epoch + 1)))?;
                    if !pass.loss.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite loss in phase {} epoch {}",
                            phase + 1,
                            epoch + 1
                        )));
                    }
                    total += pass.loss * (end - start) as f64;
                    frames_seen += end - start;
                    states = pass.final_states();
                    apply_gradients(&mut stack, &pass.grads, lr);
                    start = end;
                }
            }
            let entry = EpochLoss {
                phase: phase + 1,
                epoch: epoch + 1,
                mean_loss: total / frames_seen as f64,
            };
            on_epoch(&entry);
            history.push(entry);
        }
    }

    for id in stack.layer_ids() {
        if let Some(tensor) = stack.layer(id).first_non_finite() {
            return Err(Error::Numeric(format!("parameter {id}.{tensor} became non-finite")));
        }
    }

    let traces = flights
        .iter()
        .map(|f| {
            Ok(FlightLossTrace {
                flight_id: f.flight_id.clone(),
                losses: per_frame_losses(&stack, &f.frames)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        stack,
        stats: TrainLossStats::from_traces(traces),
        history,
    })
}

fn slice_rows(m: &Matrix, start: usize, end: usize) -> Matrix {
    Matrix::from_vec(
        end - start,
        m.cols(),
        m.as_slice()[start * m.cols()..end * m.cols()].to_vec(),
    )
    .expect("row slice within bounds")
}

/// Name every tensor of a layer, e.g. `stage0.encoder.W_ii`.
pub fn tensor_labels(id: LayerId) -> Vec<String> {
    TENSOR_NAMES.iter().map(|t| format!("{id}.{t}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Part;
    use rand::Rng;

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse(&[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn weight_branches() {
        assert_eq!(weight_factor(&[0.0], &[0.4], 0.5), vec![0.2]);
        assert_eq!(weight_factor(&[0.0], &[0.8], 0.5), vec![0.8]);
        assert_eq!(weight_factor(&[0.0], &[0.5], 0.5), vec![0.25]);
    }

    #[test]
    fn scalar_weighted_loss() {
        let cfg = WeightedLossConfig {
            enabled: true,
            c_per_stage: vec![0.5],
        };
        let l = weighted_loss(&[0.0], &[0.4], &cfg, 0).unwrap();
        assert!((l - 0.032).abs() < 1e-15);
        assert_eq!(weighted_loss(&[0.3, 1.0], &[0.3, 1.0], &cfg, 0).unwrap(), 0.0);
    }

    #[test]
    fn sgd_cases() {
        let mut p = LstmLayerParams::zeros(1, 1);
        p.input_gate.b_input[0] = 1.0;
        let mut g = p.zeros_like();
        g.input_gate.b_input[0] = 2.0;
        let before = p.clone();
        sgd_step(&mut p, &g, 0.0);
        assert_eq!(p, before);
        sgd_step(&mut p, &g, 0.1);
        assert!((p.input_gate.b_input[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_fast_fine_tuning() {
        let mut s = TrainingSchedule::default();
        s.stage_learning_rates[3] = 1e-2;
        assert!(s.validate(4).is_err());
        assert!(TrainingSchedule::default().validate(4).is_ok());
    }

    #[test]
    fn perfect_reconstruction_has_zero_gradient() {
        // With a zero stack the output is 0, so a zero target is reproduced exactly.
        let stack = StackedAutoencoder::zeros(&[3, 2]).unwrap();
        let chain = stack.stage_chain(0);
        let x = Matrix::zeros(4, 3);
        let pass =
            backprop_through_time(&stack, &chain, &x, &x, stack.zero_states(&chain), None).unwrap();
        assert_eq!(pass.loss, 0.0);
        for (_, g) in &pass.grads.layers {
            assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let stack = StackedAutoencoder::new(&[3, 2], 4).unwrap();
        let chain = stack.stage_chain(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let zero = stack.zero_states(&chain);
        let a = backprop_through_time(&stack, &chain, &x, &x, zero.clone(), None).unwrap();
        let w = Matrix::from_fn(4, 3, |_, _| 2.0);
        let b = backprop_with_weights(&stack, &chain, &x, &x, zero, Some(w)).unwrap();
        assert!((b.loss - 2.0 * a.loss).abs() < 1e-15);
        let enc = LayerId {
            stage: 0,
            part: Part::Encoder,
        };
        let g1 = a.grads.get(enc).unwrap();
        let g2 = b.grads.get(enc).unwrap();
        for (t1, t2) in g1.tensors().iter().zip(g2.tensors()) {
            for (v1, v2) in t1.iter().zip(t2) {
                assert!((2.0 * v1 - v2).abs() <= 1e-12 * v1.abs().max(1.0));
            }
        }
    }
}
