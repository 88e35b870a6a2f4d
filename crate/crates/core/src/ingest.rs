//! Sensor stream loading, feature rejection and timestamp pooling.
//!
//! Each flight is a directory holding one `<feature>.csv` per sensor channel
//! (`timestamp_ms,value`) and a `labels.csv` (`timestamp_ms,anomalous`).
//! Channels are logged at independent rates, so [`pool_timestamps`] aligns
//! them onto a fixed grid by picking, per feature, the sample nearest to each
//! grid point. A grid point where any feature has no sample within
//! `max_gap_ms` is dropped entirely.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const LABEL_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

/// Cell contents treated as a missing reading.
const NULL_MARKERS: &[&str] = &["", "null", "NULL", "nan", "NaN", "NA", "none", "None"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    Engine,
    Rudder,
    Elevator,
    AileronLeft,
    AileronRight,
    AileronBoth,
    RudderAndAileron,
    None,
}

impl FaultType {
    pub fn is_faulty(self) -> bool {
        self != FaultType::None
    }
}

/// Raw multi-rate channels for one flight. Stream values may be NaN where the
/// source file carried a null marker; [`select_features`] removes such channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStreamSet {
    pub flight_id: String,
    pub streams: BTreeMap<String, Vec<(i64, f64)>>,
    pub fault_labels: Vec<(i64, bool)>,
    pub fault_type: FaultType,
}

impl SensorStreamSet {
    pub fn feature_names(&self) -> Vec<String> {
        self.streams.keys().cloned().collect()
    }

    /// Check the ordering invariants on streams and labels.
    pub fn validate(&self) -> Result<()> {
        for (name, samples) in &self.streams {
            if samples.is_empty() {
                return Err(Error::Data(format!(
                    "flight {}: stream '{name}' is empty",
                    self.flight_id
                )));
            }
            if samples.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Data(format!(
                    "flight {}: stream '{name}' timestamps not strictly increasing",
                    self.flight_id
                )));
            }
        }
        if self.fault_labels.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data(format!(
                "flight {}: label timestamps not strictly increasing",
                self.flight_id
            )));
        }
        if !self.fault_type.is_faulty() && self.fault_labels.iter().any(|&(_, a)| a) {
            return Err(Error::Data(format!(
                "flight {}: no-fault flight carries anomalous labels",
                self.flight_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolingConfig {
    pub stride_ms: u32,
    pub max_gap_ms: u32,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            stride_ms: 100,
            max_gap_ms: 100,
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride_ms == 0 {
            return Err(Error::Config("pooling.stride_ms must be > 0".into()));
        }
        if self.max_gap_ms == 0 {
            return Err(Error::Config("pooling.max_gap_ms must be > 0".into()));
        }
        Ok(())
    }
}

/// Time-aligned frames of one flight.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub flight_id: String,
    pub feature_names: Vec<String>,
    pub timestamps: Vec<i64>,
    pub frames: Matrix,
    pub labels: Vec<bool>,
}

impl FrameSeries {
    pub fn new(
        flight_id: impl Into<String>,
        feature_names: Vec<String>,
        timestamps: Vec<i64>,
        frames: Matrix,
        labels: Vec<bool>,
    ) -> Result<Self> {
        if frames.rows() != timestamps.len() || labels.len() != timestamps.len() {
            return Err(Error::Dimension {
                context: "frame series rows",
                expected: timestamps.len(),
                actual: frames.rows().max(labels.len()),
            });
        }
        if frames.cols() != feature_names.len() {
            return Err(Error::Dimension {
                context: "frame series columns",
                expected: feature_names.len(),
                actual: frames.cols(),
            });
        }
        Ok(Self {
            flight_id: flight_id.into(),
            feature_names,
            timestamps,
            frames,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Same metadata, new feature matrix and names.
    pub fn with_frames(&self, feature_names: Vec<String>, frames: Matrix) -> Result<Self> {
        Self::new(
            self.flight_id.clone(),
            feature_names,
            self.timestamps.clone(),
            frames,
            self.labels.clone(),
        )
    }

    /// CSV layout: `timestamp_ms,anomalous,<feature...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("timestamp_ms,anomalous");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in self.frames.iter_rows().enumerate() {
            out.push_str(&self.timestamps[i].to_string());
            out.push(',');
            out.push(if self.labels[i] { '1' } else { '0' });
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        crate::artifact::write_atomic(path, out.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let flight_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".frames").to_string())
            .unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.len() < 2 || &headers[0] != "timestamp_ms" || &headers[1] != "anomalous" {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                message: "expected header 'timestamp_ms,anomalous,...'".into(),
            });
        }
        let feature_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            if rec.len() != feature_names.len() + 2 {
                return Err(parse_err(path, line, "wrong number of columns"));
            }
            timestamps.push(parse_i64(path, line, &rec[0])?);
            labels.push(parse_flag(path, line, &rec[1])?);
            for cell in rec.iter().skip(2) {
                data.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(path, line, format!("bad value '{cell}'")))?,
                );
            }
        }
        let frames = Matrix::from_vec(timestamps.len(), feature_names.len(), data)?;
        FrameSeries::new(flight_id, feature_names, timestamps, frames, labels)
    }
}

/// Load one flight directory.
pub fn load_streams(dir: &Path, flight_id: &str, fault_type: FaultType) -> Result<SensorStreamSet> {
    let label_path = dir.join(LABEL_FILE);
    if !label_path.is_file() {
        return Err(Error::Data(format!(
            "flight {flight_id}: missing label file {}",
            label_path.display()
        )));
    }

    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name().is_some_and(|n| n != LABEL_FILE)
        })
        .collect();
    paths.sort();

    let mut streams = BTreeMap::new();
    for path in paths {
        let feature = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("non-UTF-8 file name {}", path.display())))?
            .to_string();
        let rows = read_two_column(&path, "value", |file, line, cell| {
            let cell = cell.trim();
            if NULL_MARKERS.contains(&cell) {
                return Ok(f64::NAN);
            }
            cell.parse::<f64>()
                .map_err(|_| parse_err(file, line, format!("bad value '{cell}'")))
        })?;
        if rows.is_empty() {
            return Err(Error::Data(format!(
                "flight {flight_id}: stream '{feature}' is empty ({})",
                path.display()
            )));
        }
        streams.insert(feature, sort_dedup(rows));
    }

    let labels = read_two_column(&label_path, "anomalous", parse_flag)?;
    if labels.is_empty() {
        return Err(Error::Data(format!("flight {flight_id}: label file is empty")));
    }

    let set = SensorStreamSet {
        flight_id: flight_id.to_string(),
        streams,
        fault_labels: sort_dedup(labels),
        fault_type,
    };
    set.validate()?;
    Ok(set)
}

/// Sort by timestamp, keeping the row that appeared last for duplicate stamps.
fn sort_dedup<T: Copy>(mut rows: Vec<(i64, T)>) -> Vec<(i64, T)> {
    rows.sort_by_key(|r| r.0); // stable: file order survives within a timestamp
    let mut out: Vec<(i64, T)> = Vec::with_capacity(rows.len());
    for row in rows {
        match out.last_mut() {
            Some(last) if last.0 == row.0 => *last = row,
            _ => out.push(row),
        }
    }
    out
}

fn read_two_column<T>(
    path: &Path,
    value_header: &str,
    parse: impl Fn(&Path, u64, &str) -> Result<T>,
) -> Result<Vec<(i64, T)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp_ms" || &headers[1] != value_header {
        return Err(parse_err(
            path,
            1,
            format!("expected header 'timestamp_ms,{value_header}'"),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected 2 columns"));
        }
        out.push((parse_i64(path, line, &rec[0])?, parse(path, line, &rec[1])?));
    }
    Ok(out)
}

fn parse_i64(path: &Path, line: u64, cell: &str) -> Result<i64> {
    cell.trim()
        .parse::<i64>()
        .map_err(|_| parse_err(path, line, format!("bad timestamp '{cell}'")))
}

fn parse_flag(path: &Path, line: u64, cell: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_err(path, line, format!("bad label '{other}', expected 0 or 1"))),
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RejectReason {
    /// Matched a configured derived-feature pattern.
    Derived { pattern: String },
    /// Too few distinct values to carry information.
    Unstable { distinct: usize },
    /// Contains null readings.
    NullValues { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub feature: String,
    #[serde(flatten)]
    pub reason: RejectReason,
}

/// Apply the two rejection rules: derived-feature patterns, then stability
/// (enough distinct values, no nulls).
pub fn select_features(
    set: &SensorStreamSet,
    rejects: &[String],
    min_distinct: usize,
) -> Result<(SensorStreamSet, Vec<Rejection>)> {
    let patterns = rejects
        .iter()
        .map(|p| {
            glob::Pattern::new(p)
                .map(|g| (p.clone(), g))
                .map_err(|e| Error::Config(format!("bad reject pattern '{p}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kept = BTreeMap::new();
    let mut report = Vec::new();
    for (name, samples) in &set.streams {
        if let Some((pattern, _)) = patterns.iter().find(|(_, g)| g.matches(name)) {
            report.push(Rejection {
                feature: name.clone(),
                reason: RejectReason::Derived {
                    pattern: pattern.clone(),
                },
            });
            continue;
        }
        let nulls = samples.iter().filter(|s| s.1.is_nan()).count();
        if nulls > 0 {
            report.push(Rejection {
                feature: name.clone(),
                reason: RejectReason::NullValues { count: nulls },
            });
            continue;
        }
        let distinct = count_distinct(samples.iter().map(|s| s.1));
        if distinct < min_distinct {
            report.push(Rejection {
                feature: name.clone(),
                reason: RejectReason::Unstable { distinct },
            });
            continue;
        }
        kept.insert(name.clone(), samples.clone());
    }

    if kept.is_empty() {
        return Err(Error::Data(format!(
            "flight {}: every feature was rejected",
            set.flight_id
        )));
    }
    Ok((
        SensorStreamSet {
            streams: kept,
            ..set.clone()
        },
        report,
    ))
}

/// Keep exactly the features in `names`; every one must exist.
pub fn retain_features(set: &SensorStreamSet, names: &[String]) -> Result<SensorStreamSet> {
    let mut streams = BTreeMap::new();
    for name in names {
        let samples = set.streams.get(name).ok_or_else(|| {
            Error::Data(format!(
                "flight {}: required feature '{name}' is missing",
                set.flight_id
            ))
        })?;
        streams.insert(name.clone(), samples.clone());
    }
    Ok(SensorStreamSet {
        streams,
        ..set.clone()
    })
}

fn count_distinct(values: impl Iterator<Item = f64>) -> usize {
    // +0.0 and -0.0 count as one value.
    values
        .map(|v| if v == 0.0 { 0u64 } else { v.to_bits() })
        .collect::<HashSet<_>>()
        .len()
}

/// Index of the sample nearest to `t`; ties go to the earlier sample.
fn nearest<T>(samples: &[(i64, T)], t: i64) -> Option<usize> {
    if samples.is_empty() {
        return None;
    }
    let idx = samples.partition_point(|s| s.0 < t);
    if idx == 0 {
        return Some(0);
    }
    if idx == samples.len() {
        return Some(idx - 1);
    }
    let before = t - samples[idx - 1].0;
    let after = samples[idx].0 - t;
    Some(if after < before { idx } else { idx - 1 })
}

/// Label of the label entry nearest to `t`; an exact tie resolves to anomalous.
fn nearest_label(labels: &[(i64, bool)], t: i64) -> bool {
    if labels.is_empty() {
        return false;
    }
    let idx = labels.partition_point(|s| s.0 < t);
    if idx == 0 {
        return labels[0].1;
    }
    if idx == labels.len() {
        return labels[idx - 1].1;
    }
    let before = t - labels[idx - 1].0;
    let after = labels[idx].0 - t;
    match after.cmp(&before) {
        std::cmp::Ordering::Less => labels[idx].1,
        std::cmp::Ordering::Greater => labels[idx - 1].1,
        std::cmp::Ordering::Equal => labels[idx].1 || labels[idx - 1].1,
    }
}

/// Pool independently sampled streams onto the grid `t = k·stride_ms`,
/// `k = 0..=last_timestamp/stride_ms`.
pub fn pool_timestamps(set: &SensorStreamSet, cfg: &PoolingConfig) -> Result<FrameSeries> {
    cfg.validate()?;
    if set.streams.is_empty() {
        return Err(Error::Data(format!("flight {}: no streams", set.flight_id)));
    }
    let stride = i64::from(cfg.stride_ms);
    let max_gap = i64::from(cfg.max_gap_ms);
    let last = set
        .streams
        .values()
        .filter_map(|s| s.last().map(|x| x.0))
        .max()
        .unwrap_or(0);
    let feature_names = set.feature_names();
    let streams: Vec<&Vec<(i64, f64)>> = set.streams.values().collect();

    let mut timestamps = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut row = Vec::with_capacity(streams.len());
    if last >= 0 {
        'grid: for k in 0..=last / stride {
            let t = k * stride;
            row.clear();
            for s in &streams {
                let Some(i) = nearest(s, t) else {
                    continue 'grid;
                };
                if (s[i].0 - t).abs() > max_gap {
                    continue 'grid;
                }
                row.push(s[i].1);
            }
            timestamps.push(t);
            labels.push(nearest_label(&set.fault_labels, t));
            data.extend_from_slice(&row);
        }
    }

    if timestamps.is_empty() {
        return Err(Error::Data(format!(
            "flight {}: pooling discarded every frame",
            set.flight_id
        )));
    }
    let frames = Matrix::from_vec(timestamps.len(), feature_names.len(), data)?;
    FrameSeries::new(set.flight_id.clone(), feature_names, timestamps, frames, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub dir: PathBuf,
    pub fault_type: FaultType,
    pub role: FlightRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(rename = "flight", default)]
    pub flights: Vec<FlightEntry>,
}

impl Manifest {
    pub fn new(flights: Vec<FlightEntry>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            flights,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Artifact {
                path: path.to_path_buf(),
                message: format!(
                    "manifest format_version {} unsupported (expected {MANIFEST_VERSION})",
                    manifest.format_version
                ),
            });
        }
        let mut seen = HashSet::new();
        for f in &manifest.flights {
            if !seen.insert(&f.id) {
                return Err(Error::Data(format!("duplicate flight id '{}' in manifest", f.id)));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        crate::artifact::write_atomic(path, text.as_bytes())
    }

    pub fn flight_dir(&self, manifest_path: &Path, entry: &FlightEntry) -> PathBuf {
        if entry.dir.is_absolute() {
            entry.dir.clone()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&entry.dir)
        }
    }
}
