//! Pipeline configuration, loaded from TOML.
//!
//! Every field has a default, so an empty file (or no file) is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Variant;
use crate::ingest::{FaultType, PoolingConfig};
use crate::preprocess::ComponentCount;
use crate::thresholding::ThresholdConfig;
use crate::training::{TrainingSchedule, WeightedLossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Glob patterns of derived channels to drop.
    pub reject: Vec<String>,
    pub min_distinct: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            reject: Vec::new(),
            min_distinct: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaConfig {
    /// Number of components; capped at the input width.
    pub k: usize,
    /// When set, keep the fewest components reaching this variance fraction.
    pub variance_target: Option<f64>,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            k: 50,
            variance_target: None,
        }
    }
}

impl PcaConfig {
    pub fn component_count(&self, input_dim: usize) -> ComponentCount {
        match self.variance_target {
            Some(f) => ComponentCount::VarianceTarget(f),
            None => ComponentCount::Fixed(self.k.min(input_dim)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input width followed by each stage's latent width.
    pub dims: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: vec![50, 30, 15, 10],
        }
    }
}

impl ModelConfig {
    /// Dims for data of width `input_dim`: the first entry is replaced by the
    /// actual width, which must still exceed the first latent width.
    pub fn dims_for(&self, input_dim: usize) -> Result<Vec<usize>> {
        let mut dims = self.dims.clone();
        if dims.len() < 2 {
            return Err(Error::Config("model.dims needs an input width and at least one latent width".into()));
        }
        dims[0] = input_dim;
        if dims.windows(2).any(|w| w[1] >= w[0] || w[1] == 0) {
            return Err(Error::Config(format!(
                "model.dims must be strictly decreasing and positive for input width {input_dim}, got {dims:?}"
            )));
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub runs: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    /// Fault types scored by `evaluate`; others are skipped.
    pub fault_types: Vec<FaultType>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            seed: 0,
            variants: Variant::ALL.to_vec(),
            fault_types: vec![FaultType::Engine],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub pooling: PoolingConfig,
    pub features: FeatureConfig,
    pub pca: PcaConfig,
    pub model: ModelConfig,
    pub training: TrainingSchedule,
    pub weighted_loss: WeightedLossConfig,
    pub threshold: ThresholdConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply a master seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.training.seed = seed;
        self.evaluation.seed = seed;
        self
    }

    pub fn phases(&self) -> usize {
        self.model.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.pooling.validate()?;
        if self.features.min_distinct == 0 {
            return Err(Error::Config("features.min_distinct must be positive".into()));
        }
        if self.pca.k == 0 {
            return Err(Error::Config("pca.k must be positive".into()));
        }
        if let Some(f) = self.pca.variance_target {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("pca.variance_target {f} outside (0, 1]")));
            }
        }
        self.model.dims_for(self.model.dims[0].max(1))?;
        self.training.validate(self.phases())?;
        self.weighted_loss.validate(self.phases())?;
        self.threshold.validate()?;
        if self.evaluation.runs == 0 {
            return Err(Error::Config("evaluation.runs must be positive".into()));
        }
        if self.evaluation.variants.is_empty() {
            return Err(Error::Config("evaluation.variants must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.pooling.stride_ms, 100);
        assert_eq!(cfg.model.dims, vec![50, 30, 15, 10]);
        assert_eq!(cfg.threshold.w_y, 0.3);
        assert_eq!(cfg.threshold.w_z, 0.7);
        assert_eq!(cfg.threshold.window, 100);
        assert_eq!(cfg.weighted_loss.c_per_stage, vec![0.5, 0.12, 0.02, 0.8]);
        assert_eq!(cfg.training.stage_epochs, vec![5000, 5000, 5000, 2000]);
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.training.stage_epochs = vec![3, 3, 3, 1];
        cfg.evaluation.variants = vec![Variant::St, Variant::DtDw];
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let cfg = PipelineConfig::from_toml("[threshold]\nmode = \"static\"\nw_y = 0.3\nw_z = 0.7\nwindow = 100\n").unwrap();
        assert_eq!(cfg.pooling.stride_ms, 100);
    }

    #[test]
    fn dims_follow_data_width() {
        let m = ModelConfig::default();
        assert_eq!(m.dims_for(40).unwrap(), vec![40, 30, 15, 10]);
        assert!(m.dims_for(20).is_err());
    }
}
