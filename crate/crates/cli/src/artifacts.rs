//! On-disk artifact formats for solved models: value function, policy and
//! threshold tables as JSON, experiment outputs as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use battctl_core::mdp::Mdp;
use battctl_core::solver::{Policy, ValueFunction};
use battctl_core::thresholds::ThresholdTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateMeta {
    pub demand: f64,
    pub price: f64,
    pub mode: u16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueArtifact {
    pub alpha: f64,
    pub battery_levels: Vec<f64>,
    pub states: Vec<StateMeta>,
    /// `values[x][b]`, aligned with `states` and `battery_levels`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub battery_levels: Vec<f64>,
    pub states: Vec<StateMeta>,
    /// Target battery level in kWh for every `(state, level)` cell.
    pub targets_kwh: Vec<Vec<f64>>,
}

fn state_meta(mdp: &Mdp) -> Vec<StateMeta> {
    mdp.states
        .iter()
        .map(|s| StateMeta {
            demand: s.demand,
            price: s.price,
            mode: s.mode,
        })
        .collect()
}

pub fn value_artifact(mdp: &Mdp, values: &ValueFunction) -> ValueArtifact {
    ValueArtifact {
        alpha: mdp.alpha,
        battery_levels: mdp.grids.battery_levels.clone(),
        states: state_meta(mdp),
        values: (0..mdp.n_states())
            .map(|x| values.state_values(x).to_vec())
            .collect(),
    }
}

pub fn policy_artifact(mdp: &Mdp, policy: &Policy) -> PolicyArtifact {
    PolicyArtifact {
        battery_levels: mdp.grids.battery_levels.clone(),
        states: state_meta(mdp),
        targets_kwh: (0..mdp.n_states())
            .map(|x| {
                (0..mdp.n_levels())
                    .map(|b| mdp.grids.battery_levels[policy.target(x, b)])
                    .collect()
            })
            .collect(),
    }
}

fn check_states_match(mdp: &Mdp, states: &[StateMeta], what: &str) -> Result<()> {
    if states.len() != mdp.n_states() {
        bail!(
            "{what}: {} states on disk, {} in the configured model",
            states.len(),
            mdp.n_states()
        );
    }
    for (x, (meta, state)) in states.iter().zip(&mdp.states).enumerate() {
        if meta.mode != state.mode
            || (meta.price - state.price).abs() > 1e-9
            || (meta.demand - state.demand).abs() > 1e-9
        {
            bail!("{what}: state {x} does not match the configured model");
        }
    }
    Ok(())
}

impl ValueArtifact {
    pub fn into_value_function(self, mdp: &Mdp) -> Result<ValueFunction> {
        check_states_match(mdp, &self.states, "value artifact")?;
        if (self.alpha - mdp.alpha).abs() > 1e-12 {
            bail!(
                "value artifact was solved with alpha {}, config has {}",
                self.alpha,
                mdp.alpha
            );
        }
        if self.values.iter().any(|row| row.len() != mdp.n_levels()) {
            bail!("value artifact rows do not match the battery grid");
        }
        Ok(ValueFunction::from_rows(self.values)?)
    }
}

impl PolicyArtifact {
    pub fn into_policy(self, mdp: &Mdp) -> Result<Policy> {
        check_states_match(mdp, &self.states, "policy artifact")?;
        let mut targets = Vec::with_capacity(mdp.n_states() * mdp.n_levels());
        for (x, row) in self.targets_kwh.iter().enumerate() {
            if row.len() != mdp.n_levels() {
                bail!("policy artifact row {x} does not match the battery grid");
            }
            for (b, &kwh) in row.iter().enumerate() {
                let idx = mdp.grids.level_index(kwh).with_context(|| {
                    format!(
                        "policy artifact: target {kwh} kWh at state {x} level {b} is off the grid"
                    )
                })?;
                targets.push(idx as u32);
            }
        }
        Ok(Policy::from_targets(
            targets,
            mdp.n_states(),
            mdp.n_levels(),
        )?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating '{}'", path.display()))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw =
        std::fs::read_to_string(path).with_context(|| format!("reading '{}'", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing '{}'", path.display()))
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdTable> {
    read_json(path)
}

pub const VALUE_FILE: &str = "value_function.json";
pub const POLICY_FILE: &str = "policy.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
