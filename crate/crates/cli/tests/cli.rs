use mcgdiff_cli::Manifest;
use std::path::Path;
use std::process::{Command, Output};

fn mcgdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcgdiff")).args(args).env_remove("MCGDIFF_OUT_DIR").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_gmm(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run-gmm", "--seed", "7", "--particles", "256", "--samples", "2000", "--out-dir", path(dir)];
    args.extend_from_slice(extra);
    mcgdiff(&args)
}

#[test]
fn run_gmm_writes_files_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert!(small_gmm(&a, &[]).status.success());
    for f in ["prior.json", "problem.json", "samples.csv", "exact.csv", "metrics.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let m = Manifest::read(&a.join("manifest.json")).unwrap();
    assert_eq!(m.spec_version, mcgdiff_cli::manifest::SPEC_VERSION);
    assert!(m.summary["sw"].is_finite() && m.summary["sw_noise_floor"] > 0.0);
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.contains("sw_noise_floor"));

    let b = tmp.path().join("b");
    let out = mcgdiff(&["run-gmm", "--config", path(&a.join("manifest.json")), "--out-dir", path(&b)]);
    assert!(out.status.success());
    let replay = Manifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(replay.summary["sw"], m.summary["sw"]);
    assert_eq!(replay.outputs, m.outputs);
}

#[test]
fn manifest_records_one_tau_per_observed_coordinate() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(small_gmm(tmp.path(), &["--d-y", "4"]).status.success());
    let m = Manifest::read(&tmp.path().join("manifest.json")).unwrap();
    let tau = m.tau.unwrap();
    assert_eq!(tau.len(), 4);
    let steps = m.steps.unwrap();
    assert!(tau.iter().all(|t| steps.contains(t)));
}

#[test]
fn flags_beat_config_file_which_beats_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 11, "particles": 64, "d_y": 2, "samples": 500}"#).unwrap();
    let out = mcgdiff(&["run-gmm", "--config", path(&cfg), "--particles", "32", "--out-dir", path(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::read(&tmp.path().join("manifest.json")).unwrap();
    assert_eq!(m.config.particles, 32);
    assert_eq!((m.config.d_y, m.config.seed, m.config.samples), (2, Some(11), 500));
    assert_eq!(m.config.d_x, 8);
}

#[test]
fn output_directory_defaults_to_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mcgdiff"))
        .args(["timesteps", "--seed", "1"])
        .env("MCGDIFF_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("timesteps.csv").exists());
}

#[test]
fn missing_seed_is_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mcgdiff(&["run-gmm", "--out-dir", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn invalid_fields_are_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    for (flag, value, field) in [("--d-y", "8", "d_y"), ("--kappa", "0", "kappa"), ("--particles", "0", "particles")] {
        let out = small_gmm(tmp.path(), &[flag, value]);
        assert_eq!(out.status.code(), Some(2), "{flag}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(field), "{flag}");
    }
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "particels": 3}"#).unwrap();
    let out = mcgdiff(&["run-gmm", "--config", path(&bad), "--out-dir", path(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("particels"));
}

#[test]
fn failed_check_sets_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = small_gmm(tmp.path(), &["--max-sw-ratio", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL sw"));
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn sw_of_a_file_with_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(small_gmm(tmp.path(), &[]).status.success());
    let samples = tmp.path().join("samples.csv");
    let dir = tmp.path().join("sw");
    let out = mcgdiff(&["sw", path(&samples), path(&samples), "--seed", "3", "--out-dir", path(&dir)]);
    assert!(out.status.success());
    let m = Manifest::read(&dir.join("manifest.json")).unwrap();
    assert_eq!(m.summary["sw"], 0.0);
}

#[test]
fn timesteps_match_the_reference_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mcgdiff(&["timesteps", "--seed", "0", "--ddim-steps", "20", "--out-dir", path(tmp.path())]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS timesteps") && stdout.contains("PASS tau"), "{stdout}");
    let csv = std::fs::read_to_string(tmp.path().join("timesteps.csv")).unwrap();
    assert!(csv.starts_with("index,step,alpha_bar,matched"));
}

#[test]
fn conjugate_check_prints_pass_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mcgdiff(&["conjugate-check", "--seed", "0", "--out-dir", path(tmp.path())]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS noiseless: mean error"), "{stdout}");
    assert!(stdout.contains("PASS noisy: mean error"), "{stdout}");
    assert!(out.status.success());
}
