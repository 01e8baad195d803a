//! JSON run configuration: one document describes the battery, the grids,
//! the data sources and the experiment parameters. Unknown keys are
//! rejected. A few fields can be overridden from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use battctl_core::ingest::{FillRule, GridSteps};
use battctl_core::model::{BatteryParams, RateLimit};
use battctl_core::sim::Method;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub battery: BatteryCfg,
    #[serde(default)]
    pub grids: GridsCfg,
    pub alpha: f64,
    #[serde(default)]
    pub solver: SolverCfg,
    #[serde(default)]
    pub seed: u64,
    pub data: DataCfg,
    #[serde(default)]
    pub experiment: ExperimentCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryCfg {
    pub b_max: f64,
    #[serde(default = "one")]
    pub eta_c: f64,
    #[serde(default = "one")]
    pub eta_d: f64,
    #[serde(default = "one")]
    pub xi: f64,
    #[serde(default)]
    pub replacement: Option<ReplacementCfg>,
    #[serde(default)]
    pub rate_charge: Option<RateLimit>,
    #[serde(default)]
    pub rate_discharge: Option<RateLimit>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplacementCfg {
    pub q: f64,
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl BatteryCfg {
    pub fn to_params(&self) -> Result<BatteryParams> {
        pub use battctl_core::model::Replacement;
        let params = BatteryParams {
            b_max: self.b_max,
            eta_c: self.eta_c,
            eta_d: self.eta_d,
            rate_charge: self.rate_charge.clone().unwrap_or(RateLimit::Unbounded),
            rate_discharge: self.rate_discharge.clone().unwrap_or(RateLimit::Unbounded),
            xi: self.xi,
            replacement: self.replacement.map(|r| Replacement { q: r.q, c: r.c }),
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsCfg {
    #[serde(default = "default_battery_step")]
    pub battery_step: f64,
    #[serde(default = "default_price_step")]
    pub price_step: f64,
}

fn default_battery_step() -> f64 {
    0.5
}

fn default_price_step() -> f64 {
    5.0
}

impl Default for GridsCfg {
    fn default() -> Self {
        GridsCfg {
            battery_step: default_battery_step(),
            price_step: default_price_step(),
        }
    }
}

impl GridsCfg {
    pub fn steps(&self) -> GridSteps {
        GridSteps {
            price_step: self.price_step,
            demand_step: self.battery_step,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    #[serde(default = "default_method")]
    pub method: MethodKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Value,
    Policy,
}

fn default_method() -> MethodKind {
    MethodKind::Policy
}

fn default_tol() -> f64 {
    battctl_core::solver::DEFAULT_TOL
}

impl Default for SolverCfg {
    fn default() -> Self {
        SolverCfg {
            method: default_method(),
            tol: default_tol(),
            max_iters: None,
        }
    }
}

impl SolverCfg {
    pub fn method(&self) -> Method {
        match self.method {
            MethodKind::Value => Method::Value {
                tol: self.tol,
                max_iters: self.max_iters.unwrap_or(1_000_000),
            },
            MethodKind::Policy => Method::Policy {
                max_iters: self.max_iters.unwrap_or(500),
            },
        }
    }

    /// Sup-norm accuracy of the value table the chosen method produces.
    pub fn accuracy(&self, alpha: f64) -> f64 {
        match self.method {
            MethodKind::Value => self.tol / 2.0,
            MethodKind::Policy => battctl_core::solver::EVAL_TOL * alpha / (1.0 - alpha),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    #[serde(default)]
    pub price: Option<PriceSource>,
    #[serde(default)]
    pub demand: Option<DemandSource>,
    /// Describe the exogenous chain directly instead of fitting traces.
    #[serde(default)]
    pub model: Option<ModelCfg>,
    #[serde(default = "default_train_days")]
    pub train_days: usize,
    #[serde(default = "default_eval_days")]
    pub eval_days: usize,
    /// Factorize per-hour joint distributions into independent marginals.
    #[serde(default)]
    pub independent: bool,
    /// How to treat missing hours in price CSVs.
    #[serde(default)]
    pub fill: FillRule,
}

fn default_train_days() -> usize {
    31
}

fn default_eval_days() -> usize {
    28
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceSource {
    Csv(PathBuf),
    Synthetic(SynthPriceCfg),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    Csv(PathBuf),
    Synthetic(SynthDemandCfg),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPriceCfg {
    #[serde(default)]
    pub profile: ProfileKind,
    /// Price level of the flat profile, ct/kWh.
    #[serde(default = "default_flat_level")]
    pub level: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Cheap nights, two-peak day.
    #[default]
    Residential,
    Flat,
}

fn default_flat_level() -> f64 {
    10.0
}

fn default_sigma() -> f64 {
    0.15
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDemandCfg {
    #[serde(default = "default_occupants")]
    pub occupants: u32,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_occupants() -> u32 {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelCfg {
    /// Price-driven Markov chain with a constant demand.
    MarkovPrices {
        price_levels: Vec<f64>,
        transition: Vec<Vec<f64>>,
        demand: f64,
    },
    /// Independent draws each slot.
    Iid {
        price: Vec<(f64, f64)>,
        demand: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCfg {
    /// Initial battery level for replays, kWh.
    #[serde(default)]
    pub b0: f64,
    /// Battery sizes for `sweep`, kWh, ascending.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<f64>,
    /// User counts for `pool`.
    #[serde(default = "default_users")]
    pub users: Vec<usize>,
}

fn default_sizes() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_users() -> Vec<usize> {
    vec![1, 2, 4]
}

impl Default for ExperimentCfg {
    fn default() -> Self {
        ExperimentCfg {
            b0: 0.0,
            sizes: default_sizes(),
            users: default_users(),
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub b_max: Option<f64>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config '{}'", path.display()))?;
    let mut config: RunConfig = serde_json::from_str(&raw)
        .with_context(|| format!("parsing config '{}'", path.display()))?;
    if let Some(alpha) = overrides.alpha {
        config.alpha = alpha;
    }
    if let Some(b_max) = overrides.b_max {
        config.battery.b_max = b_max;
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(tol) = overrides.tol {
        config.solver.tol = tol;
    }
    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<()> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        bail!("alpha = {} must lie strictly between 0 and 1", config.alpha);
    }
    config.battery.to_params()?;
    if config.data.model.is_none() {
        if config.data.price.is_none() || config.data.demand.is_none() {
            bail!("data needs either a model or both price and demand sources");
        }
        if config.data.train_days == 0 {
            bail!("train_days must be >= 1");
        }
    }
    if !config.solver.tol.is_finite() || config.solver.tol <= 0.0 {
        bail!("solver.tol must be > 0");
    }
    Ok(())
}
