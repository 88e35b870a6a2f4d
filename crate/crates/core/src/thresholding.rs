//! Static and dynamic reconstruction-loss thresholds.
//!
//! The static threshold is `L = μ_train + σ_train`. The dynamic threshold for
//! frame `n` blends it with the statistics of the previous `j` losses of the
//! same flight:
//!
//! ```text
//! T_n = W_y·L + W_z·(M + S)
//! M   = mean(loss[n−j .. n−1])
//! S   = std(loss[n−j .. n−1])      (population)
//! ```
//!
//! The window never contains the frame being classified. With fewer than `j`
//! prior losses the window uses whatever is available; frame 0 gets `L`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::training::TrainLossStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    pub w_y: f64,
    pub w_z: f64,
    pub window: usize,
    /// Keep losses of frames flagged anomalous out of the rolling window.
    pub exclude_flagged: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Dynamic,
            w_y: 0.3,
            w_z: 0.7,
            window: 100,
            exclude_flagged: false,
        }
    }
}

impl ThresholdConfig {
    pub fn static_mode() -> Self {
        Self {
            mode: ThresholdMode::Static,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_y >= 0.0 && self.w_z >= 0.0) {
            return Err(Error::Config("threshold weights must be non-negative".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("threshold window must be at least 2".into()));
        }
        Ok(())
    }
}

/// `L = μ_train + σ_train`.
pub fn static_threshold(stats: &TrainLossStats) -> f64 {
    stats.mean + stats.std
}

/// Per-flight threshold state. Create a fresh engine (or [`reset`]) for every
/// flight.
///
/// [`reset`]: ThresholdEngine::reset
#[derive(Debug, Clone)]
pub struct ThresholdEngine {
    config: ThresholdConfig,
    static_level: f64,
    window: VecDeque<f64>,
}

impl ThresholdEngine {
    pub fn new(config: ThresholdConfig, static_level: f64) -> Result<Self> {
        config.validate()?;
        if !(static_level >= 0.0) {
            return Err(Error::Config(format!(
                "static threshold must be non-negative, got {static_level}"
            )));
        }
        Ok(Self {
            config,
            static_level,
            window: VecDeque::with_capacity(config.window),
        })
    }

    pub fn config(&self) -> &ThresholdConfig {
        &self.config
    }

    pub fn static_level(&self) -> f64 {
        self.static_level
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Threshold for the next frame, from the losses pushed so far.
    pub fn next_threshold(&self) -> f64 {
        match self.config.mode {
            ThresholdMode::Static => self.static_level,
            ThresholdMode::Dynamic => {
                if self.window.is_empty() {
                    return self.static_level;
                }
                let n = self.window.len() as f64;
                let mean = self.window.iter().sum::<f64>() / n;
                let var = self.window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                self.config.w_y * self.static_level + self.config.w_z * (mean + var.sqrt())
            }
        }
    }

    pub fn push(&mut self, loss: f64) {
        if self.window.len() == self.config.window {
            self.window.pop_front();
        }
        self.window.push_back(loss);
    }

    /// Classify one frame and advance the window.
    pub fn classify(&mut self, loss: f64) -> (f64, bool) {
        let threshold = self.next_threshold();
        let verdict = loss > threshold;
        if !(verdict && self.config.exclude_flagged) {
            self.push(loss);
        }
        (threshold, verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    pub timestamps: Vec<i64>,
    pub losses: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub verdicts: Vec<bool>,
}

impl DetectionTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// CSV `timestamp_ms,loss,threshold,verdict`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_ms,loss,threshold,verdict\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.timestamps[i],
                self.losses[i],
                self.thresholds[i],
                u8::from(self.verdicts[i])
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Run a fresh pass of `engine` over one flight's losses.
pub fn classify_flight(timestamps: &[i64], losses: &[f64], engine: &mut ThresholdEngine) -> Result<DetectionTrace> {
    if timestamps.len() != losses.len() {
        return Err(Error::Dimension {
            context: "classify_flight",
            expected: timestamps.len(),
            actual: losses.len(),
        });
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("loss at frame {i} is not finite")));
    }
    engine.reset();
    let mut thresholds = Vec::with_capacity(losses.len());
    let mut verdicts = Vec::with_capacity(losses.len());
    for &loss in losses {
        let (t, v) = engine.classify(loss);
        thresholds.push(t);
        verdicts.push(v);
    }
    Ok(DetectionTrace {
        timestamps: timestamps.to_vec(),
        losses: losses.to_vec(),
        thresholds,
        verdicts,
    })
}
