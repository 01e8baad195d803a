//! Turn the configured data sources into aligned train/eval traces and a
//! solvable decision process.

use anyhow::{bail, Context, Result};

use battctl_core::ingest::{
    fit_hourly, load_trace, snap_trace, synth_demand, synth_prices, PriceProfile, Trace, TraceKind,
};
use battctl_core::mdp::{
    build_hourly, build_iid, build_markov_prices, DiscreteDist, MarkovDemand, Mdp,
};

use crate::config::{DemandSource, ModelCfg, PriceSource, ProfileKind, RunConfig, SynthDemandCfg};

/// Seed offsets so the price stream, the demand stream and every pooled
/// user draw independent randomness from one config seed.
const PRICE_SEED_OFFSET: u64 = 0;
const DEMAND_SEED_OFFSET: u64 = 1;
const USER_SEED_STRIDE: u64 = 100;

pub struct DataBundle {
    pub train_price: Trace,
    pub train_demand: Trace,
    pub eval_price: Trace,
    pub eval_demand: Trace,
}

pub fn price_profile(cfg: &crate::config::SynthPriceCfg) -> PriceProfile {
    match cfg.profile {
        ProfileKind::Residential => PriceProfile::residential(),
        ProfileKind::Flat => PriceProfile::flat(cfg.level),
    }
}

fn materialize_price(config: &RunConfig, days: usize) -> Result<Trace> {
    let steps = config.grids.steps();
    match config
        .data
        .price
        .as_ref()
        .context("config has no price source")?
    {
        PriceSource::Csv(path) => {
            let (trace, clamped) = load_trace(path, TraceKind::Price, &steps, config.data.fill)?;
            if clamped > 0 {
                eprintln!("note: clamped {clamped} negative price(s) to 0");
            }
            Ok(trace)
        }
        PriceSource::Synthetic(synth) => {
            let profile = price_profile(synth);
            let raw = synth_prices(&profile, synth.sigma, days, config.seed + PRICE_SEED_OFFSET)?;
            Ok(snap_trace(&raw, steps.price_step))
        }
    }
}

fn materialize_demand(config: &RunConfig, days: usize, seed: u64) -> Result<Trace> {
    let steps = config.grids.steps();
    match config
        .data
        .demand
        .as_ref()
        .context("config has no demand source")?
    {
        DemandSource::Csv(path) => {
            let (trace, _) = load_trace(path, TraceKind::Demand, &steps, config.data.fill)?;
            Ok(trace)
        }
        DemandSource::Synthetic(synth) => {
            let raw = synth_demand(synth.occupants, synth.sigma, days, seed)?;
            Ok(snap_trace(&raw, steps.demand_step))
        }
    }
}

fn split(trace: Trace, train_days: usize, eval_days: usize, what: &str) -> Result<(Trace, Trace)> {
    let needed = (train_days + eval_days) * 24;
    if trace.len() < needed {
        bail!(
            "{what} trace has {} hourly slots, need {needed} for {train_days} train + {eval_days} \
             eval days",
            trace.len()
        );
    }
    let (train, rest) = trace.split_at_day(train_days);
    let (eval, _) = rest.split_at_day(eval_days);
    Ok((train, eval))
}

/// Load or generate the full train/eval window.
pub fn materialize(config: &RunConfig) -> Result<DataBundle> {
    let days = config.data.train_days + config.data.eval_days;
    let price = materialize_price(config, days)?;
    let demand = materialize_demand(config, days, config.seed + DEMAND_SEED_OFFSET)?;
    let (train_price, eval_price) = split(
        price,
        config.data.train_days,
        config.data.eval_days,
        "price",
    )?;
    let (train_demand, eval_demand) = split(
        demand,
        config.data.train_days,
        config.data.eval_days,
        "demand",
    )?;
    Ok(DataBundle {
        train_price,
        train_demand,
        eval_price,
        eval_demand,
    })
}

/// Demand traces for pooled users: synthetic sources draw one independent
/// stream per user; a CSV source replicates the same household.
pub fn materialize_users(config: &RunConfig, n: usize) -> Result<Vec<(Trace, Trace)>> {
    let days = config.data.train_days + config.data.eval_days;
    let mut users = Vec::with_capacity(n);
    for user in 0..n {
        let seed = config.seed + DEMAND_SEED_OFFSET + USER_SEED_STRIDE * (user as u64 + 1);
        let demand = match config
            .data
            .demand
            .as_ref()
            .context("config has no demand source")?
        {
            DemandSource::Csv(_) => materialize_demand(config, days, seed)?,
            DemandSource::Synthetic(SynthDemandCfg { occupants, sigma }) => {
                let raw = synth_demand(*occupants, *sigma, days, seed)?;
                snap_trace(&raw, config.grids.steps().demand_step)
            }
        };
        users.push(split(
            demand,
            config.data.train_days,
            config.data.eval_days,
            "demand",
        )?);
    }
    Ok(users)
}

/// Build the decision process the config describes: either the explicit
/// chain, or per-hour empirical distributions fitted on the training
/// window.
pub fn build_mdp(config: &RunConfig, bundle: Option<&DataBundle>) -> Result<Mdp> {
    let params = config.battery.to_params()?;
    match &config.data.model {
        Some(ModelCfg::MarkovPrices {
            price_levels,
            transition,
            demand,
        }) => Ok(build_markov_prices(
            price_levels,
            transition,
            &MarkovDemand::Constant(*demand),
            params,
            config.alpha,
        )?),
        Some(ModelCfg::Iid { price, demand }) => {
            let price = DiscreteDist::new(price.clone())?;
            let demand = DiscreteDist::new(demand.clone())?;
            Ok(build_iid(&price, &demand, params, config.alpha)?)
        }
        None => {
            let bundle = bundle.context("trace-driven config needs materialized data")?;
            let empirical = fit_hourly(
                &bundle.train_price,
                &bundle.train_demand,
                &config.grids.steps(),
                config.data.independent,
            )?;
            Ok(build_hourly(&empirical, params, config.alpha)?)
        }
    }
}
