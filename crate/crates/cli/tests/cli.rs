use std::path::PathBuf;
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("beamobs-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn beamobs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamobs")).args(args).output().unwrap()
}

const SMALL: &str = "[beam]\nn_modes = 3\ngrid_size = 101\n[simulation]\nsteps_per_period = 200\n[scan]\nmode_counts = [2, 3]\n[place]\nn_modes = 3\n[estimate]\nn_modes = 3\nbudget = 3\ntrials = 2\n";

#[test]
fn unknown_key_exits_with_code_2() {
    let dir = scratch("unknown");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[place]\nbudget = 4\n").unwrap();
    let out = beamobs(&["modes", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn invalid_value_exits_with_code_2() {
    let dir = scratch("invalid");
    let out = beamobs(&["modes", "--modes", "40", "--out", dir.to_str().unwrap()]);
    // 40 modes exceed what a 501-point grid resolves
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = beamobs(&["modes", "--config", "/nonexistent/beamobs.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn modes_writes_tables_and_plots() {
    let dir = scratch("modes");
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = beamobs(&["modes", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["modes.csv", "curvatures.csv", "frequencies.csv", "modes.svg", "curvatures.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let modes = std::fs::read_to_string(dir.join("modes.csv")).unwrap();
    assert_eq!(modes.lines().next().unwrap(), "x,phi_1,phi_2,phi_3");
    assert_eq!(modes.lines().count(), 102);
}

#[test]
fn json_format_and_flags_apply() {
    let dir = scratch("json");
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = beamobs(&[
        "place",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--format",
        "json",
        "--budget",
        "2",
        "--modes",
        "2",
        "--system",
        "continuum",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.join("placement_truncated.json").exists());
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("placement_continuum_metrics.json")).unwrap()).unwrap();
    assert_eq!(table["budget"], serde_json::json!([2.0]));
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("placement_continuum.json")).unwrap()).unwrap();
    assert_eq!(sol["n_modes"], 2);
    assert_eq!(sol["solutions"][0]["selection"].as_array().unwrap().len(), 2);
}

#[test]
fn shipped_bundle_is_accepted() {
    let bundle = concat!(env!("CARGO_MANIFEST_DIR"), "/paper-repro.toml");
    let dir = scratch("bundle");
    let out = beamobs(&["modes", "--config", bundle, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let freq = std::fs::read_to_string(dir.join("frequencies.csv")).unwrap();
    assert_eq!(freq.lines().count(), 11);
}
