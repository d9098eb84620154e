use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use battery_prognostics::config::DATASET_DIR_ENV;
use battery_prognostics::report::RunManifest;

fn batprog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_batprog"))
        .args(args)
        .env_remove(DATASET_DIR_ENV)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, cells: usize) {
    let out = batprog(&["synth", "--cells", &cells.to_string(), "--seed", "3", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_then_evaluate_writes_the_benchmark_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    synth(&data, 3);
    let run = batprog(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--target",
        "rul",
        "--models",
        "poly1d,gprn",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = fs::read_to_string(out.join("summary_rul.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("model,mae_train,mae_test"));
    assert!(lines[1].starts_with("Poly1D,") && lines[2].starts_with("GPRn,"));
    // Three cells give three splits per model.
    assert_eq!(
        fs::read_to_string(out.join("results_rul.csv")).unwrap().lines().count(),
        1 + 2 * 3
    );
    let m = manifest(&out);
    assert_eq!(m.command, "evaluate");
    assert_eq!(
        m.files,
        vec!["results_rul.csv", "summary_rul.csv", "predictions_rul.csv"]
    );
    assert_eq!(m.dataset_fingerprint.unwrap().len(), 64);
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent");
    let run = batprog(&["features", "--dataset", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("absent"));

    let run = batprog(&["features", "--out", s(tmp.path())]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains(DATASET_DIR_ENV));
}

#[test]
fn bad_arguments_and_config_exit_with_two() {
    assert_eq!(batprog(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(batprog(&["evaluate", "--target", "voltage"]).status.code(), Some(2));
    assert_eq!(batprog(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[strategy]\nk = -1.0\n").unwrap();
    assert_eq!(batprog(&["--config", s(&cfg), "selftest"]).status.code(), Some(2));
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(batprog(&["--config", s(&cfg), "selftest"]).status.code(), Some(2));
    assert_eq!(batprog(&["monitor", "--cell", "x", "--k", "-2"]).status.code(), Some(2));
}

#[test]
fn features_are_deterministic_and_env_var_supplies_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(batprog(&["features", "--dataset", s(&data), "--out", s(&a)])
        .status
        .success());
    let run = Command::new(env!("CARGO_BIN_EXE_batprog"))
        .args(["features", "--out", s(&b)])
        .env(DATASET_DIR_ENV, &data)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in [
        "features.csv",
        "correlations.csv",
        "correlations_by_cell.csv",
        "ic_curves.csv",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.dataset_fingerprint, mb.dataset_fingerprint);
    assert_eq!(ma.files, mb.files);
    let corr = fs::read_to_string(a.join("correlations.csv")).unwrap();
    assert!(corr.starts_with("target,rows,f1,f2,f3,f4,f5\nsoh,"));
}

#[test]
fn monitor_and_sweep_write_kpis() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    synth(&data, 3);
    let run = batprog(&[
        "monitor",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--cell",
        "cell2",
        "--k",
        "1",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("monitor_trace_cell2.csv").is_file());
    assert!(out.join("kpi_1.csv").is_file());
    assert_eq!(
        batprog(&["monitor", "--dataset", s(&data), "--cell", "nope"])
            .status
            .code(),
        Some(2)
    );

    let run = batprog(&[
        "sweep",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--k",
        "0,2",
        "--epochs",
        "5,10",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let sweep = fs::read_to_string(out.join("sweep_k.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("epochs.csv")).unwrap().lines().count(), 3);
    assert_eq!(manifest(&out).command, "sweep");
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = batprog(&["selftest", "--out", s(tmp.path())]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(run.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("[FAIL]"));
    assert!(tmp.path().join("selftest.json").is_file());
}
