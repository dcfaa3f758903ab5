use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mmc(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(args)
        .arg("--out")
        .arg(root)
        .env_remove("MMC_SEED")
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn csv_path(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn estimate_twice_gives_identical_files() {
    let root = tempfile::tempdir().unwrap();
    let a = csv_path(&mmc(
        root.path(),
        &["estimate", "--seed", "3", "--trials", "5000"],
    ));
    let b = csv_path(&mmc(
        root.path(),
        &["estimate", "--seed", "3", "--trials", "5000"],
    ));
    assert_ne!(a, b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(header(&a), "k,d_true,d_measured,d_predicted");
}

#[test]
fn fig8_columns() {
    let root = tempfile::tempdir().unwrap();
    let p = csv_path(&mmc(root.path(), &["reproduce", "fig8"]));
    assert_eq!(header(&p), "distance,N_th_opt_pc,N_th_opt_8e4,N_th_opt_1e5");
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 10);
}

#[test]
fn trajectory_matches_export_schema() {
    let root = tempfile::tempdir().unwrap();
    let p = csv_path(&mmc(root.path(), &["trajectory", "--trials", "50"]));
    assert_eq!(header(&p), mmc_core::mobility::TRAJECTORY_COLUMNS.join(","));
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 52);
}

#[test]
fn session_writes_slot_log() {
    let root = tempfile::tempdir().unwrap();
    let p = csv_path(&mmc(
        root.path(),
        &["session", "--trials", "20", "--source", "true"],
    ));
    assert_eq!(header(&p), mmc_core::link::SLOT_COLUMNS.join(","));
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 21);
}

#[test]
fn run_directory_holds_config_echo_and_manifest() {
    let root = tempfile::tempdir().unwrap();
    let p = csv_path(&mmc(root.path(), &["threshold-sweep", "--seed", "11"]));
    let dir = p.parent().unwrap();
    assert!(dir.starts_with(root.path().join("threshold-sweep")));
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-11"));
    let echo = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    let cfg = mmc_core::config::RunConfig::from_toml_str(&echo).unwrap();
    assert_eq!(cfg.experiment.seed, Some(11));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["git_describe"].is_string());
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    // nothing is written outside the output root
    let entries: Vec<_> = std::fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("threshold-sweep")]);
}

#[test]
fn seed_comes_from_environment_when_no_flag() {
    let root = tempfile::tempdir().unwrap();
    let run = |seed_flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mmc"));
        c.args(["reproduce", "fig8", "--out"])
            .arg(root.path())
            .env("MMC_SEED", "99");
        if let Some(s) = seed_flag {
            c.args(["--seed", s]);
        }
        csv_path(&c.output().unwrap())
    };
    assert!(run(None)
        .parent()
        .unwrap()
        .to_str()
        .unwrap()
        .ends_with("-99"));
    assert!(run(Some("5"))
        .parent()
        .unwrap()
        .to_str()
        .unwrap()
        .ends_with("-5"));
}

#[test]
fn invalid_config_exits_nonzero_with_one_line() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[physics]\nvessel_radius = 0.0\nstep_interval = -1.0\n",
    )
    .unwrap();
    let out = mmc(
        root.path(),
        &["reproduce", "fig8", "--config", cfg.to_str().unwrap()],
    );
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("R_v") && err.contains("step_interval"));
    assert!(!root.path().join("fig8").exists());
}

#[test]
fn unknown_key_is_rejected_with_suggestion() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("typo.toml");
    std::fs::write(&cfg, "[physics]\nvescel_radius = 1e-5\n").unwrap();
    let out = mmc(
        root.path(),
        &["estimate", "--config", cfg.to_str().unwrap()],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("vessel_radius"));
}

#[test]
fn bad_seed_in_environment_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(["reproduce", "fig8", "--out"])
        .arg(root.path())
        .env("MMC_SEED", "abc")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("MMC_SEED"));
}
