//! Command implementations: solve, simulate, sweep, pool, verify, synth.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};

use battctl_core::ingest::{write_trace, TraceKind};
use battctl_core::sim::{self, baseline, per_hour_demand, replay, ExperimentSetup, PoolUsers};
use battctl_core::solver::Solution;
use battctl_core::thresholds::{extract, ThresholdTable};
use battctl_core::verify::verify_solution;
use battctl_core::Error as CoreError;

use crate::artifacts::{
    self, policy_artifact, read_json, value_artifact, write_json, PolicyArtifact, ValueArtifact,
    POLICY_FILE, THRESHOLDS_FILE, VALUE_FILE,
};
use crate::config::RunConfig;
use crate::data::{build_mdp, materialize, materialize_users, DataBundle};

/// Marker for `verify` failures so main can map them to exit code 4.
#[derive(Debug)]
pub struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

fn experiment_setup<'a>(config: &RunConfig, bundle: &'a DataBundle) -> ExperimentSetup<'a> {
    ExperimentSetup {
        train_price: &bundle.train_price,
        train_demand: &bundle.train_demand,
        eval_price: &bundle.eval_price,
        eval_demand: &bundle.eval_demand,
        eta_c: config.battery.eta_c,
        eta_d: config.battery.eta_d,
        alpha: config.alpha,
        steps: config.grids.steps(),
        independent: config.data.independent,
        method: config.solver.method(),
        b0: config.experiment.b0,
    }
}

fn solve_configured(config: &RunConfig) -> Result<(battctl_core::mdp::Mdp, Solution)> {
    let bundle = if config.data.model.is_none() {
        Some(materialize(config)?)
    } else {
        None
    };
    let mdp = build_mdp(config, bundle.as_ref())?;
    let solution = config.solver.method().solve(&mdp)?;
    Ok((mdp, solution))
}

pub fn cmd_solve(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let started = Instant::now();
    let (mdp, solution) = solve_configured(config)?;
    write_json(
        &out_dir.join(VALUE_FILE),
        &value_artifact(&mdp, &solution.values),
    )?;
    write_json(
        &out_dir.join(POLICY_FILE),
        &policy_artifact(&mdp, &solution.policy),
    )?;
    let mut thresholds_written = false;
    match extract(&mdp, &solution.policy) {
        Ok(table) => {
            write_json(&out_dir.join(THRESHOLDS_FILE), &table)?;
            thresholds_written = true;
        }
        Err(CoreError::PreconditionNotMet(reason)) => {
            println!("thresholds not extracted: {reason}");
        }
        Err(err) => return Err(err.into()),
    }
    println!(
        "solved {} states x {} levels in {} iteration(s), {:.3}s{}",
        mdp.n_states(),
        mdp.n_levels(),
        solution.iterations,
        started.elapsed().as_secs_f64(),
        if thresholds_written {
            ""
        } else {
            " (no threshold table)"
        },
    );
    Ok(())
}

fn load_solution(
    config: &RunConfig,
    out_dir: &Path,
) -> Result<(
    battctl_core::mdp::Mdp,
    battctl_core::solver::ValueFunction,
    battctl_core::solver::Policy,
)> {
    let bundle = if config.data.model.is_none() {
        Some(materialize(config)?)
    } else {
        None
    };
    let mdp = build_mdp(config, bundle.as_ref())?;
    let value: ValueArtifact = read_json(&out_dir.join(VALUE_FILE))?;
    let policy: PolicyArtifact = read_json(&out_dir.join(POLICY_FILE))?;
    let values = value.into_value_function(&mdp)?;
    let policy = policy.into_policy(&mdp)?;
    Ok((mdp, values, policy))
}

pub fn cmd_simulate(
    config: &RunConfig,
    out_dir: &Path,
    solve_inline: bool,
    trajectories: bool,
) -> Result<()> {
    if config.data.model.is_some() {
        bail!("simulate needs price/demand traces, not an explicit model");
    }
    let bundle = materialize(config)?;
    let mdp = build_mdp(config, Some(&bundle))?;
    let table: ThresholdTable = if solve_inline {
        let solution = config.solver.method().solve(&mdp)?;
        extract(&mdp, &solution.policy)?
    } else {
        let path = out_dir.join(THRESHOLDS_FILE);
        if !path.exists() {
            bail!(
                "no thresholds at '{}'; run `solve` first or pass --solve-inline",
                path.display()
            );
        }
        artifacts::read_thresholds(&path)?
    };

    let mut result = replay(
        &table,
        &mdp,
        &bundle.eval_price,
        &bundle.eval_demand,
        config.experiment.b0,
        config.alpha,
    )?;

    let with_storage = result.per_hour_purchases.clone();
    let without_storage = per_hour_demand(&bundle.eval_demand);
    let mut writer = csv::Writer::from_path(out_dir.join("hourly_purchases.csv"))?;
    writer.write_record(["hour", "mean_kwh_with_storage", "mean_kwh_without"])?;
    for hour in 0..24 {
        writer.write_record([
            hour.to_string(),
            format!("{}", with_storage[hour]),
            format!("{}", without_storage[hour]),
        ])?;
    }
    writer.flush()?;

    let discounted_baseline = baseline(&bundle.eval_price, &bundle.eval_demand, config.alpha)?;
    let bill_baseline = baseline(&bundle.eval_price, &bundle.eval_demand, 1.0)?;
    let savings = if bill_baseline > 0.0 {
        1.0 - result.undiscounted_cost / bill_baseline
    } else {
        0.0
    };
    let summary = serde_json::json!({
        "discounted_cost": result.discounted_cost,
        "undiscounted_cost": result.undiscounted_cost,
        "discounted_baseline": discounted_baseline,
        "undiscounted_baseline": bill_baseline,
        "relative_savings": savings,
        "operation_count": result.operation_count,
        "unseen_state_count": result.unseen_state_count,
    });
    write_json(&out_dir.join("savings_summary.json"), &summary)?;

    if !trajectories {
        result.battery_trajectory.clear();
    }
    write_json(&out_dir.join("run_result.json"), &result)?;
    println!(
        "replayed {} slots: bill {:.2} vs baseline {:.2} ({:.1}% savings)",
        bundle.eval_price.len(),
        result.undiscounted_cost,
        bill_baseline,
        100.0 * savings
    );
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, out_dir: &Path) -> Result<()> {
    if config.data.model.is_some() {
        bail!("sweep needs price/demand traces, not an explicit model");
    }
    let bundle = materialize(config)?;
    let setup = experiment_setup(config, &bundle);
    let result = sim::size_sweep(&setup, &config.experiment.sizes)?;

    let mut writer = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    writer.write_record(["b_max_kwh", "relative_savings", "saturation_flag"])?;
    for point in &result.points {
        writer.write_record([
            format!("{}", point.b_max_kwh),
            format!("{}", point.relative_savings),
            (point.saturated as u8).to_string(),
        ])?;
    }
    writer.flush()?;
    write_json(&out_dir.join("sweep.json"), &result)?;
    for point in &result.points {
        println!(
            "b_max {:>6.1} kWh: savings {:>6.2}%{}",
            point.b_max_kwh,
            100.0 * point.relative_savings,
            if point.saturated { "  (saturated)" } else { "" }
        );
    }
    if let Some(size) = result.saturation_size_kwh {
        println!("savings saturate at {size} kWh");
    }
    Ok(())
}

pub fn cmd_pool(config: &RunConfig, out_dir: &Path) -> Result<()> {
    if config.data.model.is_some() {
        bail!("pool needs price/demand traces, not an explicit model");
    }
    let bundle = materialize(config)?;
    let setup = experiment_setup(config, &bundle);

    let mut rows = Vec::new();
    for &n in &config.experiment.users {
        if n == 0 {
            bail!("pool sizes must be >= 1");
        }
        let user_traces = materialize_users(config, n)?;
        let users = PoolUsers {
            train_demands: user_traces.iter().map(|(train, _)| train).collect(),
            eval_demands: user_traces.iter().map(|(_, eval)| eval).collect(),
        };
        let result = sim::pool(&setup, &users, config.battery.b_max)?;
        println!(
            "n = {}: none {:.2}, individual {:.2}, pooled {:.2}",
            result.n_users, result.cost_none, result.cost_individual, result.cost_pooled
        );
        rows.push(result);
    }

    let mut writer = csv::Writer::from_path(out_dir.join("pool.csv"))?;
    writer.write_record(["n", "cost_none", "cost_individual", "cost_pooled"])?;
    for row in &rows {
        writer.write_record([
            row.n_users.to_string(),
            format!("{}", row.cost_none),
            format!("{}", row.cost_individual),
            format!("{}", row.cost_pooled),
        ])?;
    }
    writer.flush()?;
    write_json(&out_dir.join("pool.json"), &rows)?;
    Ok(())
}

pub fn cmd_verify(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let (mdp, values, policy) = load_solution(config, out_dir)?;
    let accuracy = config.solver.accuracy(config.alpha);
    let mut report = verify_solution(&mdp, &values, &policy, accuracy);

    // The stored threshold table must match what the stored policy implies.
    let thresholds_path = out_dir.join(THRESHOLDS_FILE);
    if thresholds_path.exists() {
        let stored = artifacts::read_thresholds(&thresholds_path)?;
        let outcome = match extract(&mdp, &policy) {
            Ok(extracted) => {
                let matches = extracted.entries.len() == stored.entries.len()
                    && extracted.entries.iter().zip(&stored.entries).all(|(a, b)| {
                        a.beta_minus_kwh == b.beta_minus_kwh && a.beta_plus_kwh == b.beta_plus_kwh
                    });
                if matches {
                    battctl_core::verify::CheckOutcome {
                        name: "threshold_artifact",
                        status: battctl_core::verify::CheckStatus::Pass,
                        details: String::new(),
                    }
                } else {
                    battctl_core::verify::CheckOutcome {
                        name: "threshold_artifact",
                        status: battctl_core::verify::CheckStatus::Fail,
                        details: "stored thresholds differ from the stored policy's".into(),
                    }
                }
            }
            Err(CoreError::PreconditionNotMet(reason)) => battctl_core::verify::CheckOutcome {
                name: "threshold_artifact",
                status: battctl_core::verify::CheckStatus::Skipped,
                details: reason,
            },
            Err(err) => battctl_core::verify::CheckOutcome {
                name: "threshold_artifact",
                status: battctl_core::verify::CheckStatus::Fail,
                details: err.to_string(),
            },
        };
        report.checks.push(outcome);
    }

    print!("{report}");
    write_json(&out_dir.join("verify_report.json"), &report)?;
    if !report.passed() {
        return Err(VerificationFailed.into());
    }
    Ok(())
}

pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let bundle = materialize(config)?;
    let mut price = bundle.train_price.clone();
    price
        .records
        .extend(bundle.eval_price.records.iter().cloned());
    let mut demand = bundle.train_demand.clone();
    demand
        .records
        .extend(bundle.eval_demand.records.iter().cloned());
    write_trace(&price, TraceKind::Price, &out_dir.join("prices.csv"))?;
    write_trace(&demand, TraceKind::Demand, &out_dir.join("demand.csv"))?;
    println!(
        "wrote {} hourly prices and {} hourly demands ({} train + {} eval days)",
        price.len(),
        demand.len(),
        config.data.train_days,
        config.data.eval_days
    );
    Ok(())
}
