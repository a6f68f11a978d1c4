use std::path::Path;
use std::process::{Command, Output};

fn hydro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydro"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hydro")
}

fn golden_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/golden/sedov_square_k2_r10_history.csv"))
}

#[test]
fn help_and_bad_input() {
    assert_eq!(hydro(&["--help"]).status.code(), Some(0));
    assert_eq!(hydro(&["--frobnicate"]).status.code(), Some(2));
    let out = hydro(&["--set", "nonsense=3", "--validate-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
    assert_eq!(hydro(&["--config", "/definitely/not/here.cfg"]).status.code(), Some(2));
}

#[test]
fn validate_config_round_trips() {
    let out = hydro(&["--problem", "sedov_hole_square", "--res", "6", "--set", "cfl=0.3", "--validate-config"]);
    assert_eq!(out.status.code(), Some(0));
    let first = String::from_utf8(out.stdout).unwrap();
    assert!(first.contains("problem = sedov_hole_square"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echo.cfg");
    std::fs::write(&path, &first).unwrap();
    let again = hydro(&["--config", path.to_str().unwrap(), "--validate-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), first);
}

#[test]
fn runtime_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = hydro(&[
        "--res",
        "3",
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--set",
        "cfl=50",
        "--set",
        "growth=1000",
        "--set",
        "shrink=0.99",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn short_run_matches_golden_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = hydro(&[
        "--problem",
        "sedov_square",
        "--order",
        "2",
        "--res",
        "10",
        "--tfinal",
        "0.2",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("config.txt").exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();

    if std::env::var_os("HYDRO_BLESS").is_some() {
        std::fs::write(golden_path(), &history).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden history; rerun with HYDRO_BLESS=1");
    assert_eq!(history.lines().count(), golden.lines().count());
    for (i, (a, b)) in history.lines().zip(golden.lines()).enumerate() {
        assert_eq!(a, b, "history line {i} differs");
    }

    // Last row: exact final time, energy conserved to round-off.
    let header: Vec<&str> = history.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<f64>> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let last = rows.last().unwrap();
    assert_eq!(last[col("t")], 0.2);
    let e0 = rows[0][col("etotal")];
    assert!((last[col("etotal")] - e0).abs() < 1e-12 * e0);
}
