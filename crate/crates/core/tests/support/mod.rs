//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the code under test except for
//! plain data types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use uavad::autoencoder::{Link, StackedAutoencoder};
use uavad::ingest::{FaultType, PoolingConfig, SensorStreamSet};
use uavad::lstm::LstmState;
use uavad::training::{self, segment_loss};
use uavad::Matrix;

// ---------------------------------------------------------------- pooling

pub struct PooledOracle {
    pub timestamps: Vec<i64>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

/// Exhaustive scan over every sample for every grid point.
pub fn pool_oracle(set: &SensorStreamSet, cfg: &PoolingConfig) -> PooledOracle {
    let stride = cfg.stride_ms as i64;
    let last = set.streams.values().flat_map(|s| s.iter().map(|x| x.0)).max().unwrap();
    let mut out = PooledOracle {
        timestamps: vec![],
        rows: vec![],
        labels: vec![],
    };
    let mut t = 0;
    while t <= last {
        let mut row = Vec::new();
        let mut keep = true;
        for samples in set.streams.values() {
            let mut best: Option<(i64, f64)> = None;
            for &(ts, v) in samples {
                let d = (ts - t).abs();
                // strict < keeps the earlier of two equidistant samples
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
            let (d, v) = best.unwrap();
            if d > cfg.max_gap_ms as i64 {
                keep = false;
            }
            row.push(v);
        }
        if keep {
            let mut best_d = i64::MAX;
            let mut label = false;
            for &(ts, l) in &set.fault_labels {
                let d = (ts - t).abs();
                if d < best_d {
                    best_d = d;
                    label = l;
                } else if d == best_d {
                    label |= l;
                }
            }
            out.timestamps.push(t);
            out.rows.push(row);
            out.labels.push(label);
        }
        t += stride;
    }
    out
}

/// Streams with random rates, jittered timestamps, gaps and label flips.
pub fn random_stream_set(rng: &mut impl Rng) -> (SensorStreamSet, PoolingConfig) {
    let n_features = rng.gen_range(1..=5);
    let duration = rng.gen_range(200..3000i64);
    let mut streams = BTreeMap::new();
    for f in 0..n_features {
        let period = rng.gen_range(20..400i64);
        let mut t = rng.gen_range(0..period);
        let mut samples = Vec::new();
        while t <= duration {
            if !rng.gen_bool(0.1) {
                samples.push((t, rng.gen_range(-5.0..5.0)));
            }
            t += period + rng.gen_range(-period / 4..=period / 4).max(1 - period);
        }
        if samples.is_empty() {
            samples.push((rng.gen_range(0..=duration), 1.0));
        }
        streams.insert(format!("f{f}"), samples);
    }
    let label_period = rng.gen_range(10..200i64);
    let onset = rng.gen_range(0..=duration);
    let mut fault_labels = Vec::new();
    let mut t = rng.gen_range(0..label_period);
    while t <= duration {
        fault_labels.push((t, t >= onset));
        t += label_period;
    }
    if fault_labels.is_empty() {
        fault_labels.push((0, false));
    }
    let cfg = PoolingConfig {
        stride_ms: rng.gen_range(20..250),
        max_gap_ms: rng.gen_range(10..300),
    };
    let set = SensorStreamSet {
        flight_id: "rand".into(),
        streams,
        fault_labels,
        fault_type: FaultType::None,
    };
    (set, cfg)
}

// ---------------------------------------------------------------- PCA

/// Covariance with denominator n, by explicit double loop.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            cov[a][b] = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
        }
    }
    cov
}

/// Eigenpairs of a symmetric PSD matrix by power iteration with deflation,
/// largest eigenvalue first. Each vector is Rayleigh-polished.
pub fn power_eigen(a: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let d = a.len();
    let mut m = a.to_vec();
    let mut pairs = Vec::new();
    for k in 0..d {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + k * 3) % 5) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let mut w = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    w[i] += m[i][j] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            lambda = norm;
            if delta < 1e-15 {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                m[i][j] -= lambda * v[i] * v[j];
            }
        }
        pairs.push((lambda, v));
    }
    pairs
}

// ---------------------------------------------------------------- BPTT

/// Forward-only objective with frozen weights.
pub fn chain_loss(
    stack: &StackedAutoencoder,
    chain: &[Link],
    input: &Matrix,
    init: &[LstmState],
    weights: Option<&Matrix>,
) -> f64 {
    let trace = stack.run_chain(chain, input, init.to_vec()).unwrap();
    segment_loss(input, trace.output(), weights)
}

/// Central differences for every parameter touched by `chain`. Returns
/// `(label, analytic, numeric)` triples.
pub fn finite_difference_check(
    stack: &StackedAutoencoder,
    chain: &[Link],
    input: &Matrix,
    init: &[LstmState],
    weight_c: Option<f64>,
    step: f64,
) -> Vec<(String, f64, f64)> {
    let pass = training::backprop_through_time(stack, chain, input, input, init.to_vec(), weight_c).unwrap();
    let weights = pass.weights.clone();
    let mut out = Vec::new();
    for (id, grads) in &pass.grads.layers {
        let labels = training::tensor_labels(*id);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (ti, tensor) in analytic.iter().enumerate() {
            for (k, &a) in tensor.iter().enumerate() {
                let mut plus = stack.clone();
                plus.layer_mut(*id).tensors_mut()[ti][k] += step;
                let mut minus = stack.clone();
                minus.layer_mut(*id).tensors_mut()[ti][k] -= step;
                let numeric = (chain_loss(&plus, chain, input, init, weights.as_ref())
                    - chain_loss(&minus, chain, input, init, weights.as_ref()))
                    / (2.0 * step);
                out.push((format!("{}[{k}]", labels[ti]), a, numeric));
            }
        }
    }
    out
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

// ---------------------------------------------------------------- thresholds

/// Direct evaluation of the dynamic threshold at frame `n` from the raw loss
/// history, without any incremental state.
pub fn dynamic_threshold_oracle(losses: &[f64], n: usize, l: f64, w_y: f64, w_z: f64, j: usize) -> f64 {
    let lo = n.saturating_sub(j);
    let window = &losses[lo..n];
    if window.is_empty() {
        return l;
    }
    let m = window.iter().sum::<f64>() / window.len() as f64;
    let s = (window.iter().map(|x| (x - m).powi(2)).sum::<f64>() / window.len() as f64).sqrt();
    w_y * l + w_z * (m + s)
}
