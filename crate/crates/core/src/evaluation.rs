//! Balanced test sets, per-flight metrics and multi-run aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::FrameSeries;
use crate::thresholding::DetectionTrace;

pub const MAX_SAMPLE_ATTEMPTS: usize = 20;
/// Slack on each summary statistic, as a fraction of the population IQR.
pub const IQR_TOLERANCE: f64 = 0.15;
/// Family-wise false rejection rate of the acceptance test on i.i.d. data.
pub const ACCEPT_ALPHA: f64 = 0.05;

const SUMMARY_PROBS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "DT+DW")]
    DtDw,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::St, Variant::Dt, Variant::DtDw];

    pub fn label(self) -> &'static str {
        match self {
            Variant::St => "ST",
            Variant::Dt => "DT",
            Variant::DtDw => "DT+DW",
        }
    }

    pub fn uses_weighted_model(self) -> bool {
        self == Variant::DtDw
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "st" => Ok(Variant::St),
            "dt" => Ok(Variant::Dt),
            "dt+dw" | "dtdw" | "dt-dw" => Ok(Variant::DtDw),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected st, dt or dt+dw)"))),
        }
    }
}

/// Per-attempt outcome of the sample acceptance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub attempts: usize,
    /// Largest distance of a sample statistic outside its acceptance band, in
    /// units of the population IQR. Accepted samples have this ≤ the tolerance.
    pub worst_excess: f64,
    pub worst_feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSample {
    pub anomalous: Vec<usize>,
    pub normal: Vec<usize>,
    pub seed: u64,
    pub acceptance: AcceptanceStats,
}

impl BalancedSample {
    /// All evaluated frame indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.anomalous.iter().chain(&self.normal).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Rank-fraction band `[lo, hi]` that the sample statistic at `p` falls into
/// with probability at least `1 − α/m` under simple random sampling.
fn rank_band(p: f64, n_sample: usize, n_pop: usize, z: f64, alpha_each: f64) -> (f64, f64) {
    let n = n_sample as f64;
    if p == 0.0 {
        return (0.0, 1.0 - alpha_each.powf(1.0 / n));
    }
    if p == 1.0 {
        return (alpha_each.powf(1.0 / n), 1.0);
    }
    let fpc = (1.0 - n / n_pop as f64).max(0.0);
    let half = z * (p * (1.0 - p) * fpc / n).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

struct FeatureSummary {
    name: String,
    sorted: Vec<f64>,
    iqr: f64,
}

fn worst_excess(
    frames: &FrameSeries,
    population: &[FeatureSummary],
    sample: &[usize],
    n_pop: usize,
) -> (f64, Option<String>) {
    let m = (population.len() * SUMMARY_PROBS.len()) as f64;
    let alpha_each = ACCEPT_ALPHA / m;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha_each / 2.0);
    let mut worst = 0.0;
    let mut worst_feature = None;
    for (f, pop) in population.iter().enumerate() {
        let mut vals: Vec<f64> = sample.iter().map(|&i| frames.frames[(i, f)]).collect();
        vals.sort_by(f64::total_cmp);
        for &p in &SUMMARY_PROBS {
            let s = quantile_sorted(&vals, p);
            let (lo, hi) = rank_band(p, sample.len(), n_pop, z, alpha_each);
            let lo_v = quantile_sorted(&pop.sorted, lo);
            let hi_v = quantile_sorted(&pop.sorted, hi);
            let outside = if s < lo_v {
                lo_v - s
            } else if s > hi_v {
                s - hi_v
            } else {
                0.0
            };
            let excess = if outside == 0.0 {
                0.0
            } else if pop.iqr > 0.0 {
                outside / pop.iqr
            } else {
                f64::INFINITY
            };
            if excess > worst {
                worst = excess;
                worst_feature = Some(pop.name.clone());
            }
        }
    }
    (worst, worst_feature)
}

/// All anomalous frames plus an equal number of normal frames drawn without
/// replacement.
///
/// A draw is accepted when, for every feature, each of the sample's min, Q1,
/// median, Q3 and max lies within `IQR_TOLERANCE · IQR` of the band of
/// population quantiles that statistic would occupy under random sampling.
/// Up to [`MAX_SAMPLE_ATTEMPTS`] draws are made.
pub fn balanced_sample(frames: &FrameSeries, seed: u64) -> Result<BalancedSample> {
    let anomalous: Vec<usize> = (0..frames.len()).filter(|&i| frames.labels[i]).collect();
    let normal_pool: Vec<usize> = (0..frames.len()).filter(|&i| !frames.labels[i]).collect();
    if anomalous.is_empty() {
        return Err(Error::Data(format!(
            "flight `{}` has no anomalous frames to balance against",
            frames.flight_id
        )));
    }
    if normal_pool.len() < anomalous.len() {
        return Err(Error::Data(format!(
            "flight `{}` has {} anomalous but only {} normal frames",
            frames.flight_id,
            anomalous.len(),
            normal_pool.len()
        )));
    }
    let population: Vec<FeatureSummary> = frames
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let mut sorted: Vec<f64> = normal_pool.iter().map(|&i| frames.frames[(i, f)]).collect();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            FeatureSummary {
                name: name.clone(),
                sorted,
                iqr,
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = (0.0, None);
    for attempt in 1..=MAX_SAMPLE_ATTEMPTS {
        let mut normal: Vec<usize> = rand::seq::index::sample(&mut rng, normal_pool.len(), anomalous.len())
            .into_iter()
            .map(|k| normal_pool[k])
            .collect();
        normal.sort_unstable();
        let (excess, feature) = worst_excess(frames, &population, &normal, normal_pool.len());
        if excess <= IQR_TOLERANCE {
            return Ok(BalancedSample {
                anomalous,
                normal,
                seed,
                acceptance: AcceptanceStats {
                    attempts: attempt,
                    worst_excess: excess,
                    worst_feature: feature,
                },
            });
        }
        last = (excess, feature);
    }
    Err(Error::Data(format!(
        "flight `{}`: no representative normal sample after {MAX_SAMPLE_ATTEMPTS} attempts \
         (worst excess {:.3} IQR on `{}`)",
        frames.flight_id,
        last.0,
        last.1.unwrap_or_default()
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub flight_id: String,
    pub variant: Variant,
    pub run: usize,
    pub seed: u64,
    pub model_id: String,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// 0 when nothing was flagged.
    pub precision: f64,
    /// 0 when there are no anomalous frames.
    pub recall: f64,
    pub accuracy: f64,
    pub detection_delay_s: Option<f64>,
}

/// Run metadata attached to a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub variant: Variant,
    pub run: usize,
    pub seed: u64,
    pub model_id: String,
}

/// Confusion counts over `subset` (all frames when `None`); delay over the full
/// trace.
pub fn compute_metrics(
    trace: &DetectionTrace,
    labels: &[bool],
    subset: Option<&[usize]>,
    flight_id: &str,
    info: &RunInfo,
) -> Result<MetricsReport> {
    if labels.len() != trace.len() {
        return Err(Error::Dimension {
            context: "compute_metrics labels",
            expected: trace.len(),
            actual: labels.len(),
        });
    }
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..labels.len()).collect();
            &all
        }
    };
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &i in idx {
        if i >= labels.len() {
            return Err(Error::Data(format!("sample index {i} out of range for flight `{flight_id}`")));
        }
        match (labels[i], trace.verdicts[i]) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MetricsReport {
        flight_id: flight_id.to_string(),
        variant: info.variant,
        run: info.run,
        seed: info.seed,
        model_id: info.model_id.clone(),
        tp,
        fp,
        tn,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        detection_delay_s: detection_delay(trace, labels),
    })
}

/// Seconds from the first anomalous frame to the first flagged anomalous frame.
pub fn detection_delay(trace: &DetectionTrace, labels: &[bool]) -> Option<f64> {
    let onset = labels.iter().position(|&l| l)?;
    let hit = (0..labels.len()).find(|&i| labels[i] && trace.verdicts[i])?;
    Some((trace.timestamps[hit] - trace.timestamps[onset]) as f64 / 1000.0)
}

pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("variant,run,seed,flight_id,tp,fp,tn,fn,precision,recall,accuracy,delay_s\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.run,
            r.seed,
            r.flight_id,
            r.tp,
            r.fp,
            r.tn,
            r.fn_,
            r.precision,
            r.recall,
            r.accuracy,
            r.detection_delay_s.map(|d| d.to_string()).unwrap_or_default()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = crate::matrix::mean_std(values);
        Self { mean, std }
    }
}

/// Flight-averaged metrics of one run of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub run: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Mean over flights whose delay is defined.
    pub delay_s: Option<f64>,
    pub undefined_delays: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub accuracy: MeanStd,
    pub delay_s: Option<MeanStd>,
    /// Flight-runs without a true positive, summed over runs.
    pub undefined_delays: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<RunSummary>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average per-flight reports into one summary per (variant, run), then take
/// mean and population std across runs. Rows come out as ST, DT, DT+DW.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Data("no metrics reports to aggregate".into()));
    }
    let mut groups: BTreeMap<(Variant, usize), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.variant, r.run)).or_default().push(r);
    }
    let runs: Vec<RunSummary> = groups
        .into_iter()
        .map(|((variant, run), rs)| {
            let delays: Vec<f64> = rs.iter().filter_map(|r| r.detection_delay_s).collect();
            RunSummary {
                variant,
                run,
                precision: mean(&rs.iter().map(|r| r.precision).collect::<Vec<_>>()),
                recall: mean(&rs.iter().map(|r| r.recall).collect::<Vec<_>>()),
                accuracy: mean(&rs.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
                delay_s: (!delays.is_empty()).then(|| mean(&delays)),
                undefined_delays: rs.len() - delays.len(),
            }
        })
        .collect();

    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let rs: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == variant).collect();
        if rs.is_empty() {
            continue;
        }
        let pick = |f: fn(&RunSummary) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
        let delays: Vec<f64> = rs.iter().filter_map(|r| r.delay_s).collect();
        rows.push(AggregateRow {
            variant,
            runs: rs.len(),
            precision: MeanStd::of(&pick(|r| r.precision)),
            recall: MeanStd::of(&pick(|r| r.recall)),
            accuracy: MeanStd::of(&pick(|r| r.accuracy)),
            delay_s: (!delays.is_empty()).then(|| MeanStd::of(&delays)),
            undefined_delays: rs.iter().map(|r| r.undefined_delays).sum(),
        });
    }
    Ok(AggregateReport { rows, runs })
}

impl AggregateReport {
    pub fn row(&self, variant: Variant) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("variant,precision,precision_std,recall,recall_std,accuracy,accuracy_std,delay_s,delay_std\n");
        for r in &self.rows {
            let (d, ds) = match r.delay_s {
                Some(m) => (m.mean.to_string(), m.std.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.precision.mean,
                r.precision.std,
                r.recall.mean,
                r.recall.std,
                r.accuracy.mean,
                r.accuracy.std,
                d,
                ds
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<7} {:>17} {:>17} {:>17} {:>17}  {}\n",
            "variant", "precision", "recall", "accuracy", "delay (s)", "no-TP flights"
        );
        let cell = |m: MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
        for r in &self.rows {
            out.push_str(&format!(
                "{:<7} {:>17} {:>17} {:>17} {:>17}  {}\n",
                r.variant.label(),
                cell(r.precision),
                cell(r.recall),
                cell(r.accuracy),
                r.delay_s.map(cell).unwrap_or_else(|| "n/a".into()),
                r.undefined_delays
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, self.to_csv().as_bytes())
    }
}
