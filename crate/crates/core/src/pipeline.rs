//! On-disk pipeline stages: preprocess, train, detect and evaluate.
//!
//! Each stage reads the artifacts of the previous one and records their
//! content hashes in its own metadata file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::autoencoder::StackedAutoencoder;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{self, AggregateReport, MetricsReport, RunInfo, Variant};
use crate::ingest::{self, FaultType, FlightRole, FrameSeries, Manifest, Rejection};
use crate::plot;
use crate::preprocess::{NormalizationParams, PcaModel, NORMALIZATION_KIND, PCA_KIND, TRANSFORM_FORMAT_VERSION};
use crate::thresholding::{self, DetectionTrace, ThresholdConfig, ThresholdEngine, ThresholdMode};
use crate::training::{self, TrainLossStats, TrainOutcome, TrainingFlight};

pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const PCA_FILE: &str = "pca.json";
pub const PREPROCESS_META_FILE: &str = "preprocess.json";
pub const FRAMES_DIR: &str = "frames";
pub const MODEL_FILE: &str = "model.json";
pub const STATS_FILE: &str = "train_stats.json";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const TRAIN_META_FILE: &str = "train.json";

const PREPROCESS_META_KIND: &str = "preprocess_meta";
const TRAIN_META_KIND: &str = "train_meta";
const META_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub id: String,
    pub role: FlightRole,
    pub fault_type: FaultType,
    /// Relative to the preprocess output directory.
    pub file: PathBuf,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMeta {
    pub manifest_sha256: String,
    pub normalization_hash: String,
    pub pca_hash: String,
    pub features: Vec<String>,
    pub rejections: Vec<Rejection>,
    pub components: usize,
    pub flights: Vec<FlightRecord>,
}

impl PreprocessMeta {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(artifact::load(&dir.join(PREPROCESS_META_FILE), PREPROCESS_META_KIND, META_FORMAT_VERSION)?.0)
    }

    pub fn flights_with_role(&self, role: FlightRole) -> impl Iterator<Item = &FlightRecord> {
        self.flights.iter().filter(move |f| f.role == role)
    }
}

fn load_flight(manifest: &Manifest, manifest_path: &Path, entry: &ingest::FlightEntry) -> Result<ingest::SensorStreamSet> {
    ingest::load_streams(&manifest.flight_dir(manifest_path, entry), &entry.id, entry.fault_type)
}

/// Fit (or reuse) transforms and write projected frames for every flight.
///
/// When the manifest holds training flights, selection, normalization and PCA
/// are fitted on them alone. A manifest of test flights only reuses the
/// transforms already in `out_dir`, keeps the records of flights written
/// there before, and fails if the transforms are missing.
pub fn preprocess(manifest_path: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<PreprocessMeta> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.flights.is_empty() {
        return Err(Error::Data("manifest lists no flights".into()));
    }
    let manifest_sha256 = artifact::sha256_file(manifest_path)?;
    let train: Vec<_> = manifest.flights.iter().filter(|f| f.role == FlightRole::Train).collect();

    let mut rejections: Vec<Rejection> = Vec::new();
    let (features, norm, pca) = if train.is_empty() {
        let norm_path = out_dir.join(NORMALIZATION_FILE);
        let pca_path = out_dir.join(PCA_FILE);
        if !norm_path.is_file() || !pca_path.is_file() {
            return Err(Error::Data(format!(
                "no fitted transforms in {}: preprocess the training flights first",
                out_dir.display()
            )));
        }
        let norm: NormalizationParams = artifact::load(&norm_path, NORMALIZATION_KIND, TRANSFORM_FORMAT_VERSION)?.0;
        let pca: PcaModel = artifact::load(&pca_path, PCA_KIND, TRANSFORM_FORMAT_VERSION)?.0;
        (norm.feature_names.clone(), norm, pca)
    } else {
        let mut rejected: BTreeMap<String, Rejection> = BTreeMap::new();
        let mut candidates: Option<Vec<String>> = None;
        let mut sets = Vec::new();
        for entry in &train {
            let set = load_flight(&manifest, manifest_path, entry)?;
            let (kept, report) = ingest::select_features(&set, &cfg.features.reject, cfg.features.min_distinct)
                .map_err(|e| e.context(format!("flight {}", entry.id)))?;
            for r in report {
                rejected.entry(r.feature.clone()).or_insert(r);
            }
            let names = kept.feature_names();
            candidates = Some(match candidates {
                None => names,
                Some(prev) => prev.into_iter().filter(|n| names.contains(n)).collect(),
            });
            sets.push(set);
        }
        let features: Vec<String> = candidates
            .unwrap_or_default()
            .into_iter()
            .filter(|n| !rejected.contains_key(n))
            .collect();
        if features.is_empty() {
            return Err(Error::Data("every feature was rejected on the training flights".into()));
        }
        rejections = rejected.into_values().collect();
        let pooled = sets
            .iter()
            .map(|s| {
                ingest::retain_features(s, &features)
                    .and_then(|s| ingest::pool_timestamps(&s, &cfg.pooling))
                    .map_err(|e| e.context(format!("flight {}", s.flight_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = NormalizationParams::fit(&pooled)?;
        let normalized = pooled.iter().map(|f| norm.apply(f)).collect::<Result<Vec<_>>>()?;
        let pca = PcaModel::fit(&normalized, cfg.pca.component_count(features.len()))?;
        (features, norm, pca)
    };

    fs::create_dir_all(out_dir.join(FRAMES_DIR)).map_err(|e| Error::io(out_dir, e))?;
    let normalization_hash = artifact::save(
        &out_dir.join(NORMALIZATION_FILE),
        NORMALIZATION_KIND,
        TRANSFORM_FORMAT_VERSION,
        &norm,
    )?;
    let pca_hash = artifact::save(&out_dir.join(PCA_FILE), PCA_KIND, TRANSFORM_FORMAT_VERSION, &pca)?;

    let mut flights = Vec::new();
    for entry in &manifest.flights {
        let series = load_flight(&manifest, manifest_path, entry)
            .and_then(|s| ingest::retain_features(&s, &features))
            .and_then(|s| ingest::pool_timestamps(&s, &cfg.pooling))
            .and_then(|f| norm.apply(&f))
            .and_then(|f| pca.apply(&f))
            .map_err(|e| e.context(format!("flight {}", entry.id)))?;
        let file = PathBuf::from(FRAMES_DIR).join(format!("{}.csv", entry.id));
        let path = out_dir.join(&file);
        series.write_csv(&path)?;
        flights.push(FlightRecord {
            id: entry.id.clone(),
            role: entry.role,
            fault_type: entry.fault_type,
            file,
            frames: series.len(),
            anomalous_frames: series.labels.iter().filter(|&&l| l).count(),
            sha256: artifact::sha256_file(&path)?,
        });
    }

    if train.is_empty() {
        // Keep records of flights preprocessed earlier with the same transforms.
        if let Ok(prev) = PreprocessMeta::load(out_dir) {
            let mut merged: Vec<FlightRecord> = prev
                .flights
                .into_iter()
                .filter(|r| !flights.iter().any(|f| f.id == r.id))
                .collect();
            merged.extend(flights);
            flights = merged;
            rejections = prev.rejections;
        }
    }

    let meta = PreprocessMeta {
        manifest_sha256,
        normalization_hash,
        pca_hash,
        features,
        rejections,
        components: pca.k(),
        flights,
    };
    artifact::save(
        &out_dir.join(PREPROCESS_META_FILE),
        PREPROCESS_META_KIND,
        META_FORMAT_VERSION,
        &meta,
    )?;
    Ok(meta)
}

/// Read the projected frames of every flight with `role`.
pub fn load_frames(preprocess_dir: &Path, role: FlightRole) -> Result<Vec<(FlightRecord, FrameSeries)>> {
    let meta = PreprocessMeta::load(preprocess_dir)?;
    meta.flights_with_role(role)
        .map(|rec| {
            let series = FrameSeries::read_csv(&preprocess_dir.join(&rec.file))?;
            Ok((rec.clone(), series))
        })
        .collect()
}

pub fn training_flights(frames: &[(FlightRecord, FrameSeries)]) -> Vec<TrainingFlight> {
    frames
        .iter()
        .map(|(rec, s)| TrainingFlight {
            flight_id: rec.id.clone(),
            frames: s.frames.clone(),
        })
        .collect()
}

/// Build a fresh stack for `flights` and train it under `cfg`.
pub fn train_flights(flights: &[TrainingFlight], cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let width = flights
        .first()
        .map(|f| f.frames.cols())
        .ok_or_else(|| Error::Data("no training flights".into()))?;
    let dims = cfg.model.dims_for(width)?;
    let stack = StackedAutoencoder::new(&dims, cfg.training.seed)?;
    training::train_greedy(stack, flights, &cfg.training, &cfg.weighted_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub preprocess_meta_sha256: String,
    pub model_hash: String,
    pub stats_hash: String,
    pub weighted_loss: bool,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
}

pub fn train(preprocess_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<TrainMeta> {
    let frames = load_frames(preprocess_dir, FlightRole::Train)?;
    let outcome = train_flights(&training_flights(&frames), cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let model_hash = outcome.stack.save(&out_dir.join(MODEL_FILE))?;
    let stats_hash = outcome.stats.save(&out_dir.join(STATS_FILE))?;
    training::write_history_csv(&outcome.history, &out_dir.join(HISTORY_FILE))?;
    let meta = TrainMeta {
        preprocess_meta_sha256: artifact::sha256_file(&preprocess_dir.join(PREPROCESS_META_FILE))?,
        model_hash,
        stats_hash,
        weighted_loss: cfg.weighted_loss.enabled,
        dims: outcome.stack.dims.clone(),
        seed: cfg.training.seed,
        train_loss_mean: outcome.stats.mean,
        train_loss_std: outcome.stats.std,
    };
    artifact::save(&out_dir.join(TRAIN_META_FILE), TRAIN_META_KIND, META_FORMAT_VERSION, &meta)?;
    Ok(meta)
}

/// A trained stack with its training-loss statistics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub stack: StackedAutoencoder,
    pub stats: TrainLossStats,
    pub id: String,
}

impl TrainedModel {
    pub fn load(model_dir: &Path) -> Result<Self> {
        let (stack, id) = StackedAutoencoder::load(&model_dir.join(MODEL_FILE))?;
        let (stats, _) = TrainLossStats::load(&model_dir.join(STATS_FILE))?;
        Ok(Self { stack, stats, id })
    }

    pub fn from_outcome(outcome: TrainOutcome) -> Result<Self> {
        let id = artifact::content_hash(&outcome.stack)?;
        Ok(Self {
            stack: outcome.stack,
            stats: outcome.stats,
            id,
        })
    }

    pub fn losses(&self, series: &FrameSeries) -> Result<Vec<f64>> {
        training::per_frame_losses(&self.stack, &series.frames)
            .map_err(|e| e.context(format!("flight {}", series.flight_id)))
    }

    pub fn classify(&self, series: &FrameSeries, threshold: &ThresholdConfig) -> Result<DetectionTrace> {
        let losses = self.losses(series)?;
        self.classify_losses(series, &losses, threshold)
    }

    pub fn classify_losses(
        &self,
        series: &FrameSeries,
        losses: &[f64],
        threshold: &ThresholdConfig,
    ) -> Result<DetectionTrace> {
        let mut engine = ThresholdEngine::new(*threshold, thresholding::static_threshold(&self.stats))?;
        thresholding::classify_flight(&series.timestamps, losses, &mut engine)
    }
}

/// Classify one flight and write `<id>.detect.csv` and `<id>.svg` to `out_dir`.
pub fn detect(model: &TrainedModel, series: &FrameSeries, threshold: &ThresholdConfig, out_dir: &Path) -> Result<DetectionTrace> {
    let trace = model.classify(series, threshold)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    trace.write_csv(&out_dir.join(format!("{}.detect.csv", series.flight_id)))?;
    let mode = match threshold.mode {
        ThresholdMode::Static => "static",
        ThresholdMode::Dynamic => "dynamic",
    };
    let svg = plot::detection_svg(&trace, &series.labels, &format!("{} ({mode} threshold)", series.flight_id));
    artifact::write_atomic(&out_dir.join(format!("{}.svg", series.flight_id)), svg.as_bytes())?;
    Ok(trace)
}

/// Seed of the balanced sample for `run` of flight number `flight`.
pub fn sample_seed(master: u64, run: usize, flight: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((run as u64) << 32) | flight as u64);
    rng.gen()
}

/// Models available to [`evaluate_flights`]: `plain` serves ST and DT,
/// `weighted` serves DT+DW.
pub struct EvalModels<'a> {
    pub plain: Option<&'a TrainedModel>,
    pub weighted: Option<&'a TrainedModel>,
}

#[derive(Debug, Clone)]
pub struct EvaluationOutcome {
    pub reports: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
}

/// Score every configured variant on `flights` over `cfg.evaluation.runs`
/// balanced samples.
pub fn evaluate_flights(
    models: &EvalModels<'_>,
    flights: &[FrameSeries],
    cfg: &PipelineConfig,
) -> Result<EvaluationOutcome> {
    let ev = &cfg.evaluation;
    let flights: Vec<&FrameSeries> = flights.iter().filter(|f| f.labels.iter().any(|&l| l)).collect();
    if flights.is_empty() {
        return Err(Error::Data("no test flight contains anomalous frames".into()));
    }
    let samples = flights
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            (0..ev.runs)
                .map(|r| evaluation::balanced_sample(f, sample_seed(ev.seed, r, fi)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    for &variant in &ev.variants {
        let model = if variant.uses_weighted_model() {
            models.weighted
        } else {
            models.plain
        }
        .ok_or_else(|| Error::Config(format!("variant {variant} needs a model that was not supplied")))?;
        let threshold = ThresholdConfig {
            mode: if variant == Variant::St {
                ThresholdMode::Static
            } else {
                ThresholdMode::Dynamic
            },
            ..cfg.threshold
        };
        for (fi, series) in flights.iter().enumerate() {
            let trace = model.classify(series, &threshold)?;
            for (run, sample) in samples[fi].iter().enumerate() {
                let info = RunInfo {
                    variant,
                    run,
                    seed: sample.seed,
                    model_id: model.id.clone(),
                };
                reports.push(evaluation::compute_metrics(
                    &trace,
                    &series.labels,
                    Some(&sample.indices()),
                    &series.flight_id,
                    &info,
                )?);
            }
        }
    }
    let aggregate = evaluation::aggregate_runs(&reports)?;
    Ok(EvaluationOutcome { reports, aggregate })
}

/// Evaluate the test flights of a preprocess directory and write
/// `metrics.csv`, `aggregate.csv` and `aggregate.txt`.
pub fn evaluate(
    preprocess_dir: &Path,
    models: &EvalModels<'_>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<EvaluationOutcome> {
    let flights: Vec<FrameSeries> = load_frames(preprocess_dir, FlightRole::Test)?
        .into_iter()
        .filter(|(rec, _)| cfg.evaluation.fault_types.contains(&rec.fault_type))
        .map(|(_, s)| s)
        .collect();
    if flights.is_empty() {
        return Err(Error::Data(format!(
            "no test flights of fault types {:?}",
            cfg.evaluation.fault_types
        )));
    }
    let outcome = evaluate_flights(models, &flights, cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    artifact::write_atomic(
        &out_dir.join("metrics.csv"),
        evaluation::reports_csv(&outcome.reports).as_bytes(),
    )?;
    outcome.aggregate.write_csv(&out_dir.join("aggregate.csv"))?;
    artifact::write_atomic(&out_dir.join("aggregate.txt"), outcome.aggregate.to_table().as_bytes())?;
    Ok(outcome)
}
