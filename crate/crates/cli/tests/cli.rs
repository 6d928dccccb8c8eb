//! End-to-end runs of the binary: synthetic tape -> classify -> calibrate ->
//! optimize/frontier/compare/cost-mc, plus exit-code classes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transient-exec"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("te_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const TAPE_SPEC: &str = r#"{
  "schema_version": 1,
  "type": "tape",
  "theta_bp": 3.0,
  "kernel": { "form": "parametric", "gamma0": 1.0, "l0": 3.0, "beta": 0.5 },
  "sigma_bp": 6.0,
  "half_spread_bp": 6.0,
  "trades_per_day": 400,
  "days": 60,
  "mean_size": 100.0,
  "start_price": 40.0,
  "sign_process": { "kind": "autoregressive", "phi": 0.85 },
  "trade_spacing_us": 1000000,
  "seed": 11
}"#;

#[test]
fn full_pipeline_tape_to_frontier() {
    let dir = tmp_dir("pipeline");
    fs::write(dir.join("tape.json"), TAPE_SPEC).unwrap();

    assert_ok(&run(
        &["simulate", "--spec", "tape.json", "--out-dir", "sim"],
        &dir,
    ));
    assert!(dir.join("sim/trades.csv").exists());
    assert!(dir.join("sim/quotes.csv").exists());

    assert_ok(&run(
        &[
            "classify",
            "--trades",
            "sim/trades.csv",
            "--quotes",
            "sim/quotes.csv",
            "--out",
            "signed.csv",
        ],
        &dir,
    ));
    assert!(dir.join("signed.csv").exists());

    assert_ok(&run(
        &[
            "calibrate",
            "--trades",
            "sim/trades.csv",
            "--quotes",
            "sim/quotes.csv",
            "--scheme",
            "rt",
            "--interval-secs",
            "10",
            "--kmax",
            "10",
            "--session-close-secs",
            "402",
            "--out-dir",
            "cal",
        ],
        &dir,
    ));
    for file in [
        "model.json",
        "impact_bins.csv",
        "propagator.csv",
        "series.csv",
    ] {
        assert!(dir.join("cal").join(file).exists(), "missing {file}");
    }
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("cal/model.json")).unwrap()).unwrap();
    assert_eq!(model["schema_version"], 1);
    // The tape was generated with a 6 bp half spread.
    let delta = model["delta_bp"].as_f64().unwrap();
    assert!((delta - 6.0).abs() < 0.05, "delta {delta}");

    // The calibrated model feeds the optimizer unchanged.
    assert_ok(&run(
        &[
            "optimize",
            "--model",
            "cal/model.json",
            "--participation",
            "1",
            "--lambda",
            "0",
            "--out-dir",
            "opt",
        ],
        &dir,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("opt/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let spread_per_share = report["cost"]["spread_per_share"].as_f64().unwrap();
    assert!(
        (spread_per_share - delta).abs() < 1e-9,
        "U-shaped spread equals delta"
    );

    assert_ok(&run(
        &[
            "frontier",
            "--model",
            "cal/model.json",
            "--participation",
            "1",
            "--lambdas",
            "0,1e-7,1e-5",
            "--out-dir",
            "fr",
        ],
        &dir,
    ));
    let frontier = fs::read_to_string(dir.join("fr/frontier.csv")).unwrap();
    assert_eq!(
        frontier.lines().count(),
        1 + 2 * 3,
        "two curves, three lambdas each"
    );
    assert!(dir.join("fr/propagator_frontier.csv").exists());
    assert!(dir.join("fr/ac_frontier.csv").exists());

    assert_ok(&run(
        &[
            "cost-mc",
            "--model",
            "cal/model.json",
            "--schedule",
            "opt/schedule.csv",
            "--paths",
            "5000",
            "--seed",
            "3",
            "--out",
            "mc.json",
        ],
        &dir,
    ));
    let mc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("mc.json")).unwrap()).unwrap();
    assert!(mc["z_mean"].as_f64().unwrap().abs() < 5.0);

    assert_ok(&run(
        &[
            "compare",
            "--model",
            "cal/model.json",
            "--participation",
            "1",
            "--out-dir",
            "cmp",
        ],
        &dir,
    ));
    let table = fs::read_to_string(dir.join("cmp/strategies.csv")).unwrap();
    for strategy in ["flat", "oscillating", "with_spread", "cosh"] {
        assert!(table.contains(strategy));
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn aggregated_trade_time_calibration_defaults_to_arctan() {
    let dir = tmp_dir("att");
    fs::write(dir.join("tape.json"), TAPE_SPEC).unwrap();
    assert_ok(&run(
        &["simulate", "--spec", "tape.json", "--out-dir", "sim"],
        &dir,
    ));
    assert_ok(&run(
        &[
            "calibrate",
            "--trades",
            "sim/trades.csv",
            "--quotes",
            "sim/quotes.csv",
            "--scheme",
            "att",
            "--att-d",
            "8",
            "--kmax",
            "6",
            "--out-dir",
            "cal",
        ],
        &dir,
    ));
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("cal/model.json")).unwrap()).unwrap();
    assert_eq!(model["impact"]["form"], "arctan");
    assert_eq!(model["scheme"]["kind"], "aggregated_trade_time");
    // The arctan model still feeds the optimizer (linearized at the origin).
    assert_ok(&run(
        &[
            "optimize",
            "--model",
            "cal/model.json",
            "--participation",
            "1",
            "--out-dir",
            "opt",
        ],
        &dir,
    ));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn simulate_is_deterministic_for_fixed_seed() {
    let dir = tmp_dir("determinism");
    fs::write(
        dir.join("tape.json"),
        TAPE_SPEC.replace("\"days\": 60", "\"days\": 3"),
    )
    .unwrap();
    assert_ok(&run(
        &["simulate", "--spec", "tape.json", "--out-dir", "a"],
        &dir,
    ));
    assert_ok(&run(
        &["simulate", "--spec", "tape.json", "--out-dir", "b"],
        &dir,
    ));
    assert_eq!(
        fs::read(dir.join("a/trades.csv")).unwrap(),
        fs::read(dir.join("b/trades.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("a/quotes.csv")).unwrap(),
        fs::read(dir.join("b/quotes.csv")).unwrap()
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn interval_simulation_writes_series() {
    let dir = tmp_dir("intervals");
    let spec = r#"{
      "schema_version": 1,
      "type": "intervals",
      "theta_bp": 12.0,
      "kernel": { "form": "parametric", "gamma0": 1.0, "l0": 2.0, "beta": 0.4 },
      "sigma_bp": 15.0,
      "interval_volume": 1000.0,
      "sign_process": { "kind": "iid" },
      "magnitude": { "kind": "uniform" },
      "noise": { "kind": "gaussian" },
      "intervals_per_day": 50,
      "days": 4,
      "seed": 7
    }"#;
    fs::write(dir.join("spec.json"), spec).unwrap();
    assert_ok(&run(
        &["simulate", "--spec", "spec.json", "--out-dir", "out"],
        &dir,
    ));
    let series = fs::read_to_string(dir.join("out/series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 200);
    assert!(series.starts_with("day_id,interval_index,p_open,r,v,v_nor,W"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tmp_dir("exit_codes");

    // Missing file: input error class.
    let out = run(
        &["classify", "--trades", "nope.csv", "--quotes", "nope.csv"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));

    // Empty trades file: input error, no outputs.
    fs::write(dir.join("empty.csv"), "day_id,timestamp_us,price,size\n").unwrap();
    fs::write(
        dir.join("quotes.csv"),
        "day_id,timestamp_us,bid,ask\n0,1,9.9,10.1\n",
    )
    .unwrap();
    let out = run(
        &[
            "calibrate",
            "--trades",
            "empty.csv",
            "--quotes",
            "quotes.csv",
            "--out-dir",
            "cal_out",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("cal_out/model.json").exists());

    // Bad simulation spec: simulation error class.
    fs::write(
        dir.join("bad.json"),
        r#"{"schema_version": 1, "type": "tape"}"#,
    )
    .unwrap();
    let out = run(&["simulate", "--spec", "bad.json", "--out-dir", "x"], &dir);
    assert_eq!(out.status.code(), Some(6));

    // Unknown flags: clap usage error.
    let out = run(&["frontier", "--model"], &dir);
    assert_ne!(out.status.code(), Some(0));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn thread_cap_env_is_accepted() {
    let dir = tmp_dir("threads");
    fs::write(
        dir.join("tape.json"),
        TAPE_SPEC.replace("\"days\": 60", "\"days\": 2"),
    )
    .unwrap();
    let out = bin()
        .args(["simulate", "--spec", "tape.json", "--out-dir", "sim"])
        .env("TRANSIENT_EXEC_THREADS", "1")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_ok(&out);
    let _ = fs::remove_dir_all(&dir);
}
