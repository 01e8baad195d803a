//! End-to-end CLI behavior: exit codes, artifact round trips, config
//! validation and the synth -> solve -> simulate pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn battctl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_battctl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) {
    std::fs::write(dir.join(name), contents).unwrap();
}

const MARKOV_CONFIG: &str = r#"{
  "battery": { "b_max": 1.0 },
  "alpha": 0.9,
  "data": { "model": { "markov_prices": {
    "price_levels": [1.0, 2.0, 3.0, 4.0],
    "transition": [
      [0.5, 0.0, 0.5, 0.0],
      [1.0, 0.0, 0.0, 0.0],
      [0.0, 0.0, 0.0, 1.0],
      [0.0, 1.0, 0.0, 0.0]
    ],
    "demand": 1.0
  } } }
}"#;

const SYNTH_CONFIG: &str = r#"{
  "battery": { "b_max": 8.0 },
  "alpha": 0.97,
  "seed": 11,
  "data": {
    "price": { "synthetic": { "sigma": 0.1 } },
    "demand": { "synthetic": { "occupants": 4, "sigma": 0.1 } },
    "train_days": 10,
    "eval_days": 5
  }
}"#;

#[test]
fn solve_writes_expected_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", MARKOV_CONFIG);
    let output = battctl(&["solve"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let thresholds: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/thresholds.json")).unwrap(),
    )
    .unwrap();
    let entries = thresholds.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    let betas: Vec<f64> = entries
        .iter()
        .map(|e| e["beta_minus_kwh"].as_f64().unwrap())
        .collect();
    assert_eq!(betas, vec![1.0, 0.0, 1.0, 0.0]);
    for file in ["out/value_function.json", "out/policy.json"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
}

#[test]
fn invalid_alpha_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", MARKOV_CONFIG);
    let output = battctl(&["--alpha", "1.0", "solve"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("alpha"));
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = MARKOV_CONFIG.replace("\"alpha\": 0.9,", "\"alpha\": 0.9, \"tipo\": 1,");
    write(dir.path(), "config.json", &bad);
    let output = battctl(&["solve"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("tipo"));
}

#[test]
fn non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = MARKOV_CONFIG.replace(
        "\"alpha\": 0.9,",
        "\"alpha\": 0.9, \"solver\": { \"method\": \"value\", \"max_iters\": 2 },",
    );
    write(dir.path(), "config.json", &config);
    let output = battctl(&["solve"], dir.path());
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("convergence"));
}

#[test]
fn corrupted_policy_fails_verify_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", MARKOV_CONFIG);
    assert!(battctl(&["solve"], dir.path()).status.success());
    assert!(battctl(&["verify"], dir.path()).status.success());

    // Corrupt one policy cell to a different (valid) grid level.
    let policy_path = dir.path().join("out/policy.json");
    let mut policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy_path).unwrap()).unwrap();
    policy["targets_kwh"][0][1] = serde_json::json!(0.0);
    std::fs::write(&policy_path, serde_json::to_string_pretty(&policy).unwrap()).unwrap();

    let output = battctl(&["verify"], dir.path());
    assert_eq!(output.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("threshold_structure"), "{stdout}");
}

#[test]
fn replacement_cost_skips_structure_checks_in_verify() {
    let dir = tempfile::tempdir().unwrap();
    let config = MARKOV_CONFIG.replace(
        "\"battery\": { \"b_max\": 1.0 },",
        "\"battery\": { \"b_max\": 1.0, \"replacement\": { \"q\": 0.01, \"c\": 200.0 } },",
    );
    write(dir.path(), "config.json", &config);
    let solve = battctl(&["solve"], dir.path());
    assert!(solve.status.success());
    assert!(String::from_utf8_lossy(&solve.stdout).contains("thresholds not extracted"));
    assert!(!dir.path().join("out/thresholds.json").exists());

    let output = battctl(&["verify"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("SKIP  threshold_structure"), "{stdout}");
    assert!(stdout.contains("non-convex"), "{stdout}");
}

#[test]
fn synth_solve_simulate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", SYNTH_CONFIG);
    assert!(battctl(&["synth"], dir.path()).status.success());
    for file in ["out/prices.csv", "out/demand.csv"] {
        assert!(dir.path().join(file).exists());
    }
    // The emitted CSVs feed back in as csv sources.
    let csv_config = SYNTH_CONFIG
        .replace(
            r#""price": { "synthetic": { "sigma": 0.1 } }"#,
            r#""price": { "csv": "out/prices.csv" }"#,
        )
        .replace(
            r#""demand": { "synthetic": { "occupants": 4, "sigma": 0.1 } }"#,
            r#""demand": { "csv": "out/demand.csv" }"#,
        );
    write(dir.path(), "csv_config.json", &csv_config);
    let solve = battctl(&["--config", "csv_config.json", "solve"], dir.path());
    assert!(
        solve.status.success(),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    let simulate = battctl(&["--config", "csv_config.json", "simulate"], dir.path());
    assert!(
        simulate.status.success(),
        "{}",
        String::from_utf8_lossy(&simulate.stderr)
    );

    let csv = std::fs::read_to_string(dir.path().join("out/hourly_purchases.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "hour,mean_kwh_with_storage,mean_kwh_without"
    );
    assert_eq!(lines.count(), 24);

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/savings_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["relative_savings"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("out/run_result.json").exists());
}

#[test]
fn trajectories_flag_controls_run_result_contents() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", SYNTH_CONFIG);
    assert!(battctl(&["simulate", "--solve-inline"], dir.path())
        .status
        .success());
    let bare: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/run_result.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(bare["battery_trajectory"].as_array().unwrap().len(), 0);

    assert!(battctl(
        &["simulate", "--solve-inline", "--trajectories"],
        dir.path()
    )
    .status
    .success());
    let full: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/run_result.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(full["battery_trajectory"].as_array().unwrap().len(), 5 * 24);
}

#[test]
fn hold_fill_rule_bridges_price_gaps() {
    let dir = tempfile::tempdir().unwrap();
    // 48 hourly prices with one missing hour in the middle of day 1.
    let mut prices = String::from("timestamp,price_ct_per_kwh\n");
    let mut demand = String::from("timestamp,demand_kwh\n");
    for day in 1..=2 {
        for hour in 0..24 {
            let ts = format!("2024-01-{day:02}T{hour:02}:00:00");
            if !(day == 1 && hour == 12) {
                prices.push_str(&format!("{ts},10\n"));
            }
            demand.push_str(&format!("{ts},0.5\n"));
        }
    }
    write(dir.path(), "prices.csv", &prices);
    write(dir.path(), "demand.csv", &demand);
    let config = |fill: &str| {
        format!(
            r#"{{
              "battery": {{ "b_max": 4.0 }},
              "alpha": 0.9,
              "data": {{
                "price": {{ "csv": "prices.csv" }},
                "demand": {{ "csv": "demand.csv" }},
                "train_days": 1,
                "eval_days": 1,
                "fill": "{fill}"
              }}
            }}"#
        )
    };
    write(dir.path(), "config.json", &config("error"));
    assert_eq!(battctl(&["solve"], dir.path()).status.code(), Some(2));
    write(dir.path(), "config.json", &config("hold"));
    let output = battctl(&["solve"], dir.path());
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn simulate_without_artifacts_requires_solve_inline() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", SYNTH_CONFIG);
    let output = battctl(&["simulate"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("solve-inline"));
    let inline = battctl(&["simulate", "--solve-inline"], dir.path());
    assert!(
        inline.status.success(),
        "{}",
        String::from_utf8_lossy(&inline.stderr)
    );
}

#[test]
fn malformed_trace_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "prices.csv",
        "timestamp,price_ct_per_kwh\n2024-01-01T00:00:00,10\nbogus,5\n",
    );
    write(
        dir.path(),
        "demand.csv",
        "timestamp,demand_kwh\n2024-01-01T00:00:00,1.0\n",
    );
    let config = r#"{
      "battery": { "b_max": 4.0 },
      "alpha": 0.9,
      "data": {
        "price": { "csv": "prices.csv" },
        "demand": { "csv": "demand.csv" },
        "train_days": 1,
        "eval_days": 0
      }
    }"#;
    write(dir.path(), "config.json", config);
    let output = battctl(&["solve"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 3"));
}
