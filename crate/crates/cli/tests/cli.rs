use std::path::Path;
use std::process::{Command, Output};

fn uavad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavad")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn help_and_bad_usage() {
    assert_eq!(code(&uavad(&["--help"])), 0);
    assert_eq!(code(&uavad(&[])), 1);
    assert_eq!(code(&uavad(&["train"])), 1);
    assert_eq!(code(&uavad(&["frobnicate"])), 1);
}

#[test]
fn onset_past_duration_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavad(&["synth", "--duration", "10", "--onset", "12", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("fault.onset_s"), "{}", stderr(&out));
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[threshold]\nwindow = 1\n").unwrap();
    let out = uavad(&["--config", &p(&cfg), "preprocess", "--manifest", "x.toml", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("window"));
}

#[test]
fn missing_manifest_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavad(&["preprocess", "--manifest", &p(&dir.path().join("none.toml")), "-o", &p(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn unknown_variant_and_zero_threads_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = uavad(&["evaluate", "--frames", &p(dir.path()), "--variants", "xx", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = uavad(&["--threads", "0", "synth", "-o", &p(dir.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_then_preprocess_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = uavad(&["--seed", "5", "synth", "--flights-clean", "2", "--flights-faulty", "1", "--duration", "15", "--onset", "9", "-o", &p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = uavad(&["preprocess", "--manifest", &p(&data.join("manifest.toml")), "-o", &p(&dir.path().join("pre"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("pre/frames/test_00.csv").is_file());
}
