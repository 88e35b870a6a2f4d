//! Seeded synthetic flights with injected faults.
//!
//! Every random draw comes from `ChaCha8Rng` (the ChaCha stream cipher with 8
//! rounds, from the `rand_chacha` crate) seeded with a `u64`. Gaussian noise
//! uses `rand_distr::Normal`. Both are portable, so a seed reproduces the same
//! streams on any platform.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::{FaultType, FlightEntry, FlightRole, Manifest, SensorStreamSet, LABEL_FILE, MANIFEST_FILE};

pub const MIN_RATE_HZ: f64 = 1.0;
pub const MAX_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Sine,
    /// Linear ramp across the flight plus a slow wobble.
    Drift,
    /// Two superimposed sines at incommensurate frequencies.
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub sample_rate_hz: f64,
    pub waveform: Waveform,
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub noise_std: f64,
    /// Constant level the waveform oscillates around.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Affected channels decay exponentially towards zero.
    EnginePowerLoss,
    /// Affected channels read exactly zero.
    StuckAtZero,
    None,
}

impl FaultKind {
    pub fn fault_type(self) -> FaultType {
        match self {
            FaultKind::EnginePowerLoss => FaultType::Engine,
            FaultKind::StuckAtZero => FaultType::Elevator,
            FaultKind::None => FaultType::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub onset_s: f64,
    pub affected: Vec<String>,
    /// Decay rate in 1/s for power loss; must be positive for every kind.
    pub severity: f64,
}

impl FaultSpec {
    pub fn none() -> Self {
        Self {
            kind: FaultKind::None,
            onset_s: 0.0,
            affected: Vec::new(),
            severity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFlightSpec {
    pub flight_id: String,
    pub duration_s: f64,
    pub channels: Vec<ChannelSpec>,
    pub fault: FaultSpec,
    #[serde(default = "default_label_rate")]
    pub label_rate_hz: f64,
    pub seed: u64,
}

fn default_label_rate() -> f64 {
    20.0
}

const DEFAULT_RATES: [f64; 5] = [10.0, 20.0, 25.0, 50.0, 12.5];
const DEFAULT_MODES_HZ: [f64; 6] = [0.05, 0.08, 0.13, 0.21, 0.34, 0.55];
const DEFAULT_WAVEFORMS: [Waveform; 3] = [Waveform::Sine, Waveform::Composite, Waveform::Drift];

impl Default for SyntheticFlightSpec {
    /// 40 channels at 10–50 Hz over 60 s; power loss at 36 s on the first ten.
    fn default() -> Self {
        let channels: Vec<ChannelSpec> = (0..40)
            .map(|i| ChannelSpec {
                name: format!("sensor_{i:02}"),
                sample_rate_hz: DEFAULT_RATES[i % DEFAULT_RATES.len()],
                waveform: DEFAULT_WAVEFORMS[i % DEFAULT_WAVEFORMS.len()],
                amplitude: 1.0 + 0.25 * (i % 4) as f64,
                frequency_hz: DEFAULT_MODES_HZ[i % DEFAULT_MODES_HZ.len()],
                noise_std: 0.05,
                offset: 2.0 + (i % 3) as f64,
            })
            .collect();
        let affected = channels.iter().take(10).map(|c| c.name.clone()).collect();
        Self {
            flight_id: "synthetic".into(),
            duration_s: 60.0,
            channels,
            fault: FaultSpec {
                kind: FaultKind::EnginePowerLoss,
                onset_s: 36.0,
                affected,
                severity: 0.5,
            },
            label_rate_hz: default_label_rate(),
            seed: 0,
        }
    }
}

impl SyntheticFlightSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s", format!("must be positive, got {}", self.duration_s));
        }
        if self.channels.is_empty() {
            return bad("channels", "at least one channel required".into());
        }
        if !(self.label_rate_hz > 0.0) {
            return bad("label_rate_hz", format!("must be positive, got {}", self.label_rate_hz));
        }
        let mut names = HashSet::new();
        for c in &self.channels {
            if c.name.is_empty() || c.name.contains(['/', '\\']) || c.name == "labels" {
                return bad("channels.name", format!("invalid channel name `{}`", c.name));
            }
            if !names.insert(c.name.as_str()) {
                return bad("channels.name", format!("duplicate channel `{}`", c.name));
            }
            if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&c.sample_rate_hz) {
                return bad(
                    "channels.sample_rate_hz",
                    format!("`{}` rate {} outside [1, 50] Hz", c.name, c.sample_rate_hz),
                );
            }
            if !(c.noise_std >= 0.0) {
                return bad("channels.noise_std", format!("`{}` noise must be non-negative", c.name));
            }
            if ![c.amplitude, c.frequency_hz, c.offset].iter().all(|v| v.is_finite()) {
                return bad("channels", format!("`{}` has a non-finite parameter", c.name));
            }
        }
        let f = &self.fault;
        if !(f.severity > 0.0) {
            return bad("fault.severity", format!("must be positive, got {}", f.severity));
        }
        if f.kind != FaultKind::None {
            if !(f.onset_s >= 0.0 && f.onset_s < self.duration_s) {
                return bad(
                    "fault.onset_s",
                    format!("{} must lie in [0, duration_s = {})", f.onset_s, self.duration_s),
                );
            }
            if f.affected.is_empty() {
                return bad("fault.affected", "a fault needs at least one affected channel".into());
            }
            if let Some(a) = f.affected.iter().find(|a| !names.contains(a.as_str())) {
                return bad("fault.affected", format!("unknown channel `{a}`"));
            }
        }
        Ok(())
    }
}

fn clean_signal(c: &ChannelSpec, t: f64, duration: f64, phase: f64) -> f64 {
    let w = TAU * c.frequency_hz * t + phase;
    c.offset
        + c.amplitude
            * match c.waveform {
                Waveform::Sine => w.sin(),
                Waveform::Drift => (t / duration - 0.5) + 0.2 * w.sin(),
                Waveform::Composite => w.sin() + 0.5 * (2.7 * w + 1.3 * phase).sin(),
            }
}

pub fn generate_flight(spec: &SyntheticFlightSpec) -> Result<SensorStreamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fault = &spec.fault;
    let affected: HashSet<&str> = fault.affected.iter().map(String::as_str).collect();
    let duration_ms = spec.duration_s * 1000.0;

    // Channels sharing a frequency observe the same underlying motion, so they
    // share its phase.
    let mut phases: BTreeMap<u64, f64> = BTreeMap::new();
    let mut streams = BTreeMap::new();
    for c in &spec.channels {
        let phase = *phases
            .entry(c.frequency_hz.to_bits())
            .or_insert_with(|| rng.gen_range(0.0..TAU));
        let period_ms = 1000.0 / c.sample_rate_hz;
        let start_ms = rng.gen_range(0.0..period_ms);
        let noise = Normal::new(0.0, c.noise_std).map_err(|e| Error::Config(format!("{}: {e}", c.name)))?;
        let hit = fault.kind != FaultKind::None && affected.contains(c.name.as_str());
        let mut samples = Vec::new();
        let mut k = 0u64;
        loop {
            let t_ms = start_ms + k as f64 * period_ms;
            if t_ms >= duration_ms {
                break;
            }
            k += 1;
            let t = t_ms / 1000.0;
            let mut v = clean_signal(c, t, spec.duration_s, phase);
            let e = noise.sample(&mut rng);
            if hit && t >= fault.onset_s {
                match fault.kind {
                    FaultKind::StuckAtZero => {
                        samples.push((t_ms.round() as i64, 0.0));
                        continue;
                    }
                    FaultKind::EnginePowerLoss => v *= (-fault.severity * (t - fault.onset_s)).exp(),
                    FaultKind::None => {}
                }
            }
            samples.push((t_ms.round() as i64, v + e));
        }
        streams.insert(c.name.clone(), samples);
    }

    let label_period_ms = 1000.0 / spec.label_rate_hz;
    let onset_ms = fault.onset_s * 1000.0;
    let fault_labels = (0..)
        .map(|k| k as f64 * label_period_ms)
        .take_while(|&t| t < duration_ms)
        .map(|t| {
            let ts = t.round() as i64;
            (ts, fault.kind != FaultKind::None && ts as f64 >= onset_ms)
        })
        .collect();

    let set = SensorStreamSet {
        flight_id: spec.flight_id.clone(),
        streams,
        fault_labels,
        fault_type: fault.kind.fault_type(),
    };
    set.validate()?;
    Ok(set)
}

/// Write a flight in the ingest directory layout.
pub fn write_flight(set: &SensorStreamSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, samples) in &set.streams {
        let mut text = String::from("timestamp_ms,value\n");
        for (t, v) in samples {
            let _ = writeln!(text, "{t},{v}");
        }
        artifact::write_atomic(&dir.join(format!("{name}.csv")), text.as_bytes())?;
    }
    let mut text = String::from("timestamp_ms,anomalous\n");
    for (t, l) in &set.fault_labels {
        let _ = writeln!(text, "{t},{}", u8::from(*l));
    }
    artifact::write_atomic(&dir.join(LABEL_FILE), text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train_clean: usize,
    pub n_test_faulty: usize,
    pub base: SyntheticFlightSpec,
    /// Per-channel multiplicative jitter on amplitude and offset, drawn per flight.
    pub level_jitter: f64,
    /// Per-flight factor on every channel's noise, drawn log-uniformly.
    pub noise_scale_range: (f64, f64),
    /// Per-flight factor on every channel's amplitude, drawn log-uniformly.
    pub amplitude_scale_range: (f64, f64),
    /// Test onsets are drawn uniformly from this fraction range of the duration.
    pub onset_range: (f64, f64),
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(n_train_clean: usize, n_test_faulty: usize, base: SyntheticFlightSpec, seed: u64) -> Self {
        Self {
            n_train_clean,
            n_test_faulty,
            base,
            level_jitter: 0.1,
            noise_scale_range: (0.5, 2.0),
            amplitude_scale_range: (0.8, 1.25),
            onset_range: (0.55, 0.8),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train_clean == 0 || self.n_test_faulty == 0 {
            return Err(Error::Config(
                "corpus: n_train_clean and n_test_faulty must both be at least 1".into(),
            ));
        }
        if self.base.fault.kind == FaultKind::None {
            return Err(Error::Config("fault.kind: test flights need a fault kind".into()));
        }
        let (lo, hi) = self.onset_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("onset_range: ({lo}, {hi}) must satisfy 0 < lo ≤ hi < 1")));
        }
        for (name, (lo, hi)) in [
            ("noise_scale_range", self.noise_scale_range),
            ("amplitude_scale_range", self.amplitude_scale_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name}: ({lo}, {hi}) must satisfy 0 < lo ≤ hi")));
            }
        }
        if !(0.0..1.0).contains(&self.level_jitter) {
            return Err(Error::Config(format!("level_jitter: {} outside [0, 1)", self.level_jitter)));
        }
        self.base.validate()
    }

    /// Per-flight specs in manifest order: training flights first.
    pub fn flight_specs(&self) -> Result<Vec<(SyntheticFlightSpec, FlightRole)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.n_train_clean + self.n_test_faulty);
        let total = self.n_train_clean + self.n_test_faulty;
        for i in 0..total {
            let train = i < self.n_train_clean;
            let mut spec = self.base.clone();
            spec.seed = rng.gen();
            let noise_scale = log_uniform(&mut rng, self.noise_scale_range);
            let amplitude_scale = log_uniform(&mut rng, self.amplitude_scale_range);
            for c in &mut spec.channels {
                let j = self.level_jitter;
                c.noise_std *= noise_scale;
                c.amplitude *= amplitude_scale;
                c.amplitude *= 1.0 + rng.gen_range(-j..=j);
                c.offset *= 1.0 + rng.gen_range(-j..=j);
            }
            let onset_frac = rng.gen_range(self.onset_range.0..=self.onset_range.1);
            if train {
                spec.flight_id = format!("train_{i:02}");
                spec.fault = FaultSpec::none();
            } else {
                spec.flight_id = format!("test_{:02}", i - self.n_train_clean);
                spec.fault.onset_s = (onset_frac * spec.duration_s * 10.0).round() / 10.0;
            }
            out.push((spec, if train { FlightRole::Train } else { FlightRole::Test }));
        }
        Ok(out)
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Generate every flight of `corpus` under `out_dir` and write the manifest.
pub fn generate_corpus(corpus: &CorpusSpec, out_dir: &Path) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (spec, role) in corpus.flight_specs()? {
        let set = generate_flight(&spec).map_err(|e| e.context(format!("flight {}", spec.flight_id)))?;
        let dir = PathBuf::from(&spec.flight_id);
        write_flight(&set, &out_dir.join(&dir))?;
        entries.push(FlightEntry {
            id: spec.flight_id,
            dir,
            fault_type: set.fault_type,
            role,
        });
    }
    let manifest = Manifest::new(entries);
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
