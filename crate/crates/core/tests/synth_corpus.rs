use std::fs;
use std::path::Path;

use uavad::ingest::{load_streams, pool_timestamps, select_features, FlightRole, Manifest, PoolingConfig};
use uavad::synth::{generate_corpus, generate_flight, CorpusSpec, SyntheticFlightSpec};

fn small_base() -> SyntheticFlightSpec {
    let mut base = SyntheticFlightSpec::default();
    base.duration_s = 20.0;
    base.fault.onset_s = 12.0;
    base
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn corpus_counts_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let corpus = CorpusSpec::new(10, 5, small_base(), 7);
    let m = generate_corpus(&corpus, a.path()).unwrap();
    generate_corpus(&corpus, b.path()).unwrap();
    assert_eq!(m.flights.len(), 15);
    assert_eq!(m.flights.iter().filter(|f| f.role == FlightRole::Train && !f.fault_type.is_faulty()).count(), 10);
    let dirs = fs::read_dir(a.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 15);
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(Manifest::load(&a.path().join("manifest.toml")).unwrap(), m);
}

#[test]
fn clean_flights_pool_without_discards_and_faults_align() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusSpec::new(2, 3, small_base(), 3);
    let manifest = generate_corpus(&corpus, dir.path()).unwrap();
    let specs = corpus.flight_specs().unwrap();
    let cfg = PoolingConfig::default();
    for (entry, (spec, _)) in manifest.flights.iter().zip(&specs) {
        let set = load_streams(&dir.path().join(&entry.dir), &entry.id, entry.fault_type).unwrap();
        let (kept, rejected) = select_features(&set, &[], 2).unwrap();
        assert!(rejected.is_empty());
        let fs = pool_timestamps(&kept, &cfg).unwrap();
        let grid = (spec.duration_s * 1000.0) as i64 / 100;
        assert!(fs.len() as i64 >= grid, "{}: {} frames", entry.id, fs.len());
        let anomalous = fs.labels.iter().filter(|&&l| l).count();
        if entry.role == FlightRole::Train {
            assert_eq!(anomalous, 0);
        } else {
            assert!(anomalous > 0 && anomalous < fs.len());
            let first = fs.timestamps[fs.labels.iter().position(|&l| l).unwrap()];
            let onset_ms = (spec.fault.onset_s * 1000.0) as i64;
            assert!((first - onset_ms).abs() <= 100, "{first} vs {onset_ms}");
        }
    }
}

#[test]
fn power_loss_decays_affected_channels() {
    let mut spec = small_base();
    spec.fault.severity = 2.0;
    let set = generate_flight(&spec).unwrap();
    let late: Vec<f64> = set.streams["sensor_00"].iter().filter(|s| s.0 > 19_000).map(|s| s.1).collect();
    assert!(late.iter().all(|v| v.abs() < 0.3), "{late:?}");
    let untouched = &set.streams["sensor_39"];
    assert!(untouched.iter().filter(|s| s.0 > 19_000).all(|s| s.1.abs() > 0.3));
}

#[test]
fn invalid_corpus_rejected() {
    let mut corpus = CorpusSpec::new(0, 5, small_base(), 1);
    assert!(corpus.validate().is_err());
    corpus.n_train_clean = 1;
    corpus.onset_range = (0.9, 0.2);
    assert!(corpus.validate().unwrap_err().to_string().contains("onset_range"));
}
