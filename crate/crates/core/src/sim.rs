//! Policy replay against traces, baselines, battery-size sweeps and
//! resource-pooling experiments.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::{fit_hourly, GridSteps, Trace};
use crate::mdp::{build_hourly, Mdp};
use crate::model::{self, BatteryParams, ExogenousState};
use crate::solver::{self, Solution};
use crate::thresholds::{extract, ThresholdTable};
use crate::Result;

/// Outcome of replaying a policy over one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `sum_t g(t) alpha^t` over the trace.
    pub discounted_cost: f64,
    /// `sum_t g(t)`: the bill for the window.
    pub undiscounted_cost: f64,
    /// Mean energy bought per hour of day, kWh.
    pub per_hour_purchases: Vec<f64>,
    /// Battery level after each slot, kWh.
    pub battery_trajectory: Vec<f64>,
    /// Slots in which the battery was charged or discharged.
    pub operation_count: usize,
    /// Slots whose (price, demand) cell was never seen in training and was
    /// mapped to the nearest trained cell.
    pub unseen_state_count: usize,
}

fn check_aligned(price: &Trace, demand: &Trace) -> Result<()> {
    if price.is_empty() || demand.is_empty() {
        return Err(Error::invalid(
            "traces",
            "price and demand traces must be non-empty",
        ));
    }
    if price.len() != demand.len() {
        return Err(Error::invalid(
            "traces",
            format!("price has {} slots, demand {}", price.len(), demand.len()),
        ));
    }
    for (p, d) in price.records.iter().zip(&demand.records) {
        if p.timestamp != d.timestamp {
            return Err(Error::invalid(
                "traces",
                format!("timestamp mismatch at {} vs {}", p.timestamp, d.timestamp),
            ));
        }
    }
    Ok(())
}

/// Find the trained state nearest to `(price, demand)` within mode `mode`,
/// scaling coordinates by the grid steps; ties resolve to the lowest state
/// index. Returns the state index and whether the lookup was inexact.
fn nearest_state(mdp: &Mdp, mode: u16, price: f64, demand: f64) -> Result<(usize, bool)> {
    let p_scale = mdp.grids.price_step.max(f64::MIN_POSITIVE);
    let d_scale = mdp.grids.demand_step.max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, usize)> = None;
    for (i, state) in mdp.states.iter().enumerate() {
        if state.mode != mode {
            continue;
        }
        let dp = (state.price - price) / p_scale;
        let dd = (state.demand - demand) / d_scale;
        let dist = dp * dp + dd * dd;
        if best.map(|(d, _)| dist < d).unwrap_or(true) {
            best = Some((dist, i));
        }
    }
    match best {
        Some((dist, i)) => Ok((i, dist > 1e-18)),
        None => Err(Error::invalid(
            "thresholds",
            format!("no trained state for mode {mode}; cannot replay"),
        )),
    }
}

/// Replay the two-threshold policy in `table` against evaluation traces.
///
/// Each slot maps its (price, demand, hour) to the nearest trained state,
/// applies the three-branch rule clamped by the control set of the actual
/// demand, decomposes the move into purchases and discharge, and steps the
/// battery. Demand is met exactly every slot.
pub fn replay(
    table: &ThresholdTable,
    mdp: &Mdp,
    price: &Trace,
    demand: &Trace,
    b0: f64,
    alpha: f64,
) -> Result<RunResult> {
    check_aligned(price, demand)?;
    if table.entries.len() != mdp.n_states() {
        return Err(Error::invalid(
            "thresholds",
            "one entry per trained state required",
        ));
    }
    for (x, (entry, state)) in table.entries.iter().zip(&mdp.states).enumerate() {
        if entry.mode != state.mode
            || (entry.price - state.price).abs() > 1e-9
            || (entry.demand - state.demand).abs() > 1e-9
        {
            return Err(Error::invalid(
                "thresholds",
                format!("entry {x} does not match the model's state (stale artifacts?)"),
            ));
        }
    }
    if !(0.0..=mdp.params.b_max).contains(&b0) {
        return Err(Error::invalid(
            "b0",
            format!("{b0} outside [0, {}]", mdp.params.b_max),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1]")));
    }
    let hourly_modes = mdp.grids.modes.len() > 1;
    let params = &mdp.params;

    let mut b = b0;
    let mut discount = 1.0;
    let mut discounted = 0.0;
    let mut undiscounted = 0.0;
    let mut purchase_sums = [0.0f64; 24];
    let mut hour_counts = vec![0usize; 24];
    let mut trajectory = Vec::with_capacity(price.len());
    let mut operations = 0usize;
    let mut unseen = 0usize;

    for (p_rec, d_rec) in price.records.iter().zip(&demand.records) {
        let hour = chrono::Timelike::hour(&p_rec.timestamp);
        let mode = if hourly_modes { hour as u16 } else { 0 };
        let (state_idx, inexact) = nearest_state(mdp, mode, p_rec.value, d_rec.value)?;
        if inexact {
            unseen += 1;
        }
        let entry = &table.entries[state_idx];
        let x = ExogenousState::new(d_rec.value, p_rec.value, mode)?;
        let interval = model::control_set(params, &x, b);
        let beta = if b < entry.beta_minus_kwh {
            entry.beta_minus_kwh.min(interval.hi)
        } else if b > entry.beta_plus_kwh {
            entry.beta_plus_kwh.max(interval.lo)
        } else {
            params.retained(b)
        };
        let beta = beta.clamp(interval.lo, interval.hi);
        let action = model::decompose(params, &x, b, beta)?;
        debug_assert!(
            (action.a1 + params.eta_d * action.a3 - x.demand).abs() <= 1e-9 * (1.0 + x.demand),
            "demand not met at {}",
            p_rec.timestamp
        );
        let mut cost = action.purchased() * x.price;
        if let Some(r) = &params.replacement {
            if action.operates() {
                cost += r.q * r.c;
            }
        }
        discounted += discount * cost;
        undiscounted += cost;
        discount *= alpha;
        if action.operates() {
            operations += 1;
        }
        purchase_sums[hour as usize] += action.purchased();
        hour_counts[hour as usize] += 1;
        b = model::step(params, b, &action)?;
        trajectory.push(b);
    }

    let per_hour_purchases = purchase_sums
        .iter()
        .zip(&hour_counts)
        .map(|(sum, &count)| if count == 0 { 0.0 } else { sum / count as f64 })
        .collect();
    Ok(RunResult {
        discounted_cost: discounted,
        undiscounted_cost: undiscounted,
        per_hour_purchases,
        battery_trajectory: trajectory,
        operation_count: operations,
        unseen_state_count: unseen,
    })
}

/// Discounted cost of satisfying all demand directly from the grid:
/// `sum_t D(t) P(t) alpha^t`. `alpha = 1` gives the plain bill.
pub fn baseline(price: &Trace, demand: &Trace, alpha: f64) -> Result<f64> {
    check_aligned(price, demand)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1]")));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for (p, d) in price.records.iter().zip(&demand.records) {
        total += discount * p.value * d.value;
        discount *= alpha;
    }
    Ok(total)
}

/// Mean demand per hour of day, for purchase-profile comparisons.
pub fn per_hour_demand(demand: &Trace) -> Vec<f64> {
    let mut sums = [0.0f64; 24];
    let mut counts = vec![0usize; 24];
    for record in &demand.records {
        let hour = chrono::Timelike::hour(&record.timestamp) as usize;
        sums[hour] += record.value;
        counts[hour] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(sum, &count)| if count == 0 { 0.0 } else { sum / count as f64 })
        .collect()
}

/// Which solver computes the optimal policy in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    Value { tol: f64, max_iters: usize },
    Policy { max_iters: usize },
}

impl Default for Method {
    fn default() -> Self {
        Method::Policy { max_iters: 200 }
    }
}

impl Method {
    pub fn solve(&self, mdp: &Mdp) -> Result<Solution> {
        match *self {
            Method::Value { tol, max_iters } => solver::value_iteration(mdp, tol, max_iters),
            Method::Policy { max_iters } => solver::policy_iteration(mdp, max_iters),
        }
    }
}

/// Everything a train-solve-replay experiment needs besides the battery
/// size: traces, efficiencies, discount and solver choice.
#[derive(Debug, Clone)]
pub struct ExperimentSetup<'a> {
    pub train_price: &'a Trace,
    pub train_demand: &'a Trace,
    pub eval_price: &'a Trace,
    pub eval_demand: &'a Trace,
    pub eta_c: f64,
    pub eta_d: f64,
    pub alpha: f64,
    pub steps: GridSteps,
    /// Factorize per-hour joints into independent marginals when fitting.
    pub independent: bool,
    pub method: Method,
    /// Initial battery level for replay, kWh.
    pub b0: f64,
}

impl ExperimentSetup<'_> {
    /// Fit, solve and extract thresholds for a battery of size `b_max`.
    pub fn solve_for_size(&self, b_max: f64) -> Result<(Mdp, Solution, ThresholdTable)> {
        let params = BatteryParams::new(b_max, self.eta_c, self.eta_d)?;
        let empirical = fit_hourly(
            self.train_price,
            self.train_demand,
            &self.steps,
            self.independent,
        )?;
        let mdp = build_hourly(&empirical, params, self.alpha)?;
        let solution = self.method.solve(&mdp)?;
        let table = extract(&mdp, &solution.policy)?;
        Ok((mdp, solution, table))
    }

    fn replay_for_size(&self, b_max: f64) -> Result<RunResult> {
        let (mdp, _, table) = self.solve_for_size(b_max)?;
        replay(
            &table,
            &mdp,
            self.eval_price,
            self.eval_demand,
            self.b0,
            self.alpha,
        )
    }
}

/// One row of a battery-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub b_max_kwh: f64,
    /// `1 - bill_with_storage / bill_without`, on undiscounted costs.
    pub relative_savings: f64,
    /// Within 0.1 percentage points of the best savings in the sweep.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Smallest size already within 0.1 percentage points of the maximum.
    pub saturation_size_kwh: Option<f64>,
}

/// Saturation tolerance: 0.1 percentage points of relative savings.
pub const SATURATION_TOL: f64 = 1e-3;

/// Re-train, re-solve and replay for each battery size; savings are
/// measured against the no-storage bill on the evaluation window.
pub fn size_sweep(setup: &ExperimentSetup<'_>, sizes: &[f64]) -> Result<SweepResult> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes", "must not be empty"));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] < 0.0 {
        return Err(Error::invalid(
            "sizes",
            "must be non-negative and ascending",
        ));
    }
    let bill_without = baseline(setup.eval_price, setup.eval_demand, 1.0)?;
    let mut savings = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let saving = if size == 0.0 || bill_without == 0.0 {
            0.0
        } else {
            let result = setup.replay_for_size(size)?;
            1.0 - result.undiscounted_cost / bill_without
        };
        savings.push(saving);
    }
    let best = savings.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let points: Vec<SweepPoint> = sizes
        .iter()
        .zip(&savings)
        .map(|(&size, &saving)| SweepPoint {
            b_max_kwh: size,
            relative_savings: saving,
            saturated: saving >= best - SATURATION_TOL,
        })
        .collect();
    let saturation_size_kwh = points.iter().find(|p| p.saturated).map(|p| p.b_max_kwh);
    Ok(SweepResult {
        points,
        saturation_size_kwh,
    })
}

/// Costs of serving `n` users with no storage, with one battery each, and
/// with a single shared battery of the combined size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolResult {
    pub n_users: usize,
    /// Aggregate bill with no storage at all.
    pub cost_none: f64,
    /// Sum of per-user bills, each user solving for its own battery.
    pub cost_individual: f64,
    /// Aggregate bill with one shared battery of size `n * b_max` fed the
    /// aggregate demand.
    pub cost_pooled: f64,
}

/// Element-wise sum of aligned demand traces.
pub fn aggregate_demand(traces: &[&Trace]) -> Result<Trace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("traces", "need at least one"))?;
    let mut records = first.records.clone();
    for trace in &traces[1..] {
        if trace.len() != records.len() {
            return Err(Error::invalid("traces", "user traces must align"));
        }
        for (acc, r) in records.iter_mut().zip(&trace.records) {
            if acc.timestamp != r.timestamp {
                return Err(Error::invalid(
                    "traces",
                    "user traces must share timestamps",
                ));
            }
            acc.value += r.value;
        }
    }
    Ok(Trace { records })
}

/// Per-user train/eval demand traces under a common price signal.
pub struct PoolUsers<'a> {
    pub train_demands: Vec<&'a Trace>,
    pub eval_demands: Vec<&'a Trace>,
}

/// Compare individual storage against one shared battery of the combined
/// size, under a common price signal. Bills are undiscounted.
pub fn pool(
    setup: &ExperimentSetup<'_>,
    users: &PoolUsers<'_>,
    per_user_b_max: f64,
) -> Result<PoolResult> {
    let n = users.train_demands.len();
    if n == 0 || users.eval_demands.len() != n {
        return Err(Error::invalid(
            "users",
            "need matching train/eval demand traces",
        ));
    }
    if !per_user_b_max.is_finite() || per_user_b_max <= 0.0 {
        return Err(Error::invalid("b_max", "per-user battery size must be > 0"));
    }

    let eval_aggregate = aggregate_demand(&users.eval_demands)?;
    let cost_none = baseline(setup.eval_price, &eval_aggregate, 1.0)?;

    let mut cost_individual = 0.0;
    for (train, eval) in users.train_demands.iter().zip(&users.eval_demands) {
        let user_setup = ExperimentSetup {
            train_demand: train,
            eval_demand: eval,
            ..setup.clone()
        };
        cost_individual += user_setup
            .replay_for_size(per_user_b_max)?
            .undiscounted_cost;
    }

    let train_aggregate = aggregate_demand(&users.train_demands)?;
    let pooled_setup = ExperimentSetup {
        train_demand: &train_aggregate,
        eval_demand: &eval_aggregate,
        ..setup.clone()
    };
    let cost_pooled = pooled_setup
        .replay_for_size(per_user_b_max * n as f64)?
        .undiscounted_cost;

    Ok(PoolResult {
        n_users: n,
        cost_none,
        cost_individual,
        cost_pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_demand, synth_prices, PriceProfile, TraceRecord};
    use crate::testkit;
    use chrono::NaiveDate;

    use crate::ingest::snap_trace;

    fn hand_trace(values: &[f64]) -> Trace {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        Trace {
            records: values
                .iter()
                .enumerate()
                .map(|(i, &value)| TraceRecord {
                    timestamp: start + chrono::Duration::hours(i as i64),
                    value,
                })
                .collect(),
        }
    }

    fn zero_thresholds(mdp: &Mdp) -> ThresholdTable {
        ThresholdTable {
            entries: mdp
                .states
                .iter()
                .map(|s| crate::thresholds::ThresholdEntry {
                    mode: s.mode,
                    price: s.price,
                    demand: s.demand,
                    beta_minus_kwh: 0.0,
                    beta_plus_kwh: 0.0,
                    charge_identified: false,
                    discharge_identified: false,
                })
                .collect(),
        }
    }

    #[test]
    fn baseline_hand_example() {
        let price = hand_trace(&[10.0, 10.0, 10.0]);
        let demand = hand_trace(&[1.0, 1.0, 1.0]);
        let cost = baseline(&price, &demand, 0.5).unwrap();
        assert_eq!(cost, 17.5);
        assert_eq!(
            baseline(&price, &hand_trace(&[0.0, 0.0, 0.0]), 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_thresholds_from_empty_battery_match_baseline() {
        let mdp = testkit::constant_price(10.0, 1.0, 1.0, 0.9);
        let table = zero_thresholds(&mdp);
        let price = hand_trace(&[10.0, 10.0, 10.0, 10.0]);
        let demand = hand_trace(&[1.0, 1.0, 1.0, 1.0]);
        let result = replay(&table, &mdp, &price, &demand, 0.0, 0.9).unwrap();
        let base = baseline(&price, &demand, 0.9).unwrap();
        assert!((result.discounted_cost - base).abs() < 1e-12);
        assert_eq!(result.operation_count, 0);
        assert!(result.battery_trajectory.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn alternating_price_beats_baseline() {
        // Cheap nights, expensive days: charging cheap and discharging dear
        // must beat buying on demand.
        let mdp = {
            let params = crate::model::BatteryParams::ideal(2.0).unwrap();
            crate::mdp::build_iid(
                &crate::mdp::DiscreteDist::new(vec![(1.0, 0.5), (10.0, 0.5)]).unwrap(),
                &crate::mdp::DiscreteDist::degenerate(1.0),
                params,
                0.9,
            )
            .unwrap()
        };
        let solution = solver::value_iteration(&mdp, 1e-8, 100_000).unwrap();
        let table = extract(&mdp, &solution.policy).unwrap();
        let price = hand_trace(&[1.0, 10.0, 1.0, 10.0, 1.0, 10.0]);
        let demand = hand_trace(&[1.0; 6]);
        let result = replay(&table, &mdp, &price, &demand, 0.0, 1.0).unwrap();
        let base = baseline(&price, &demand, 1.0).unwrap();
        assert!(
            result.undiscounted_cost < base,
            "{} !< {base}",
            result.undiscounted_cost
        );
        // Independent hand replay of the three-branch rule over the trace.
        let mut b = 0.0f64;
        let mut expected = 0.0;
        for p in [1.0, 10.0, 1.0, 10.0, 1.0, 10.0] {
            let entry = table.entries.iter().find(|e| e.price == p).unwrap();
            let lo = (b - 1.0f64).max(0.0);
            let beta = if b < entry.beta_minus_kwh {
                entry.beta_minus_kwh.min(2.0)
            } else if b > entry.beta_plus_kwh {
                entry.beta_plus_kwh.max(lo)
            } else {
                b
            };
            let bought = if beta > b {
                1.0 + (beta - b)
            } else {
                1.0 - (b - beta)
            };
            expected += bought * p;
            b = beta;
        }
        assert!((result.undiscounted_cost - expected).abs() < 1e-9);
        assert!(result.operation_count >= 4);
    }

    #[test]
    fn replay_checks_preconditions() {
        let mdp = testkit::constant_price(10.0, 1.0, 1.0, 0.9);
        let table = zero_thresholds(&mdp);
        let price = hand_trace(&[10.0, 10.0]);
        let short = hand_trace(&[1.0]);
        assert!(replay(&table, &mdp, &price, &short, 0.0, 0.9).is_err());
        let empty = Trace { records: vec![] };
        assert!(replay(&table, &mdp, &empty, &empty, 0.0, 0.9).is_err());
        let demand = hand_trace(&[1.0, 1.0]);
        assert!(replay(&table, &mdp, &price, &demand, 5.0, 0.9).is_err());
    }

    #[test]
    fn trained_policy_on_training_synthetics_saves() {
        let steps = GridSteps::default();
        let train_price = snap_trace(
            &synth_prices(&PriceProfile::residential(), 0.1, 31, 1).unwrap(),
            steps.price_step,
        );
        let train_demand = snap_trace(&synth_demand(4, 0.1, 31, 2).unwrap(), steps.demand_step);
        let eval_price = snap_trace(
            &synth_prices(&PriceProfile::residential(), 0.1, 7, 3).unwrap(),
            steps.price_step,
        );
        let eval_demand = snap_trace(&synth_demand(4, 0.1, 7, 4).unwrap(), steps.demand_step);
        let setup = ExperimentSetup {
            train_price: &train_price,
            train_demand: &train_demand,
            eval_price: &eval_price,
            eval_demand: &eval_demand,
            eta_c: 1.0,
            eta_d: 1.0,
            alpha: 0.95,
            steps,
            independent: false,
            method: Method::Policy { max_iters: 200 },
            b0: 0.0,
        };
        let (mdp, _, table) = setup.solve_for_size(8.0).unwrap();
        let result = replay(&table, &mdp, &eval_price, &eval_demand, 0.0, 1.0).unwrap();
        let bill = baseline(&eval_price, &eval_demand, 1.0).unwrap();
        assert!(
            result.undiscounted_cost < bill,
            "{} !< {bill}",
            result.undiscounted_cost
        );
        assert!(result
            .battery_trajectory
            .iter()
            .all(|&b| (0.0..=8.0).contains(&b)));
    }

    #[test]
    fn sweep_zero_size_has_zero_savings() {
        let steps = GridSteps::default();
        let price = snap_trace(
            &synth_prices(&PriceProfile::residential(), 0.0, 25, 0).unwrap(),
            steps.price_step,
        );
        let demand = snap_trace(&synth_demand(2, 0.0, 25, 0).unwrap(), steps.demand_step);
        let setup = ExperimentSetup {
            train_price: &price,
            train_demand: &demand,
            eval_price: &price,
            eval_demand: &demand,
            eta_c: 1.0,
            eta_d: 1.0,
            alpha: 0.95,
            steps,
            independent: false,
            method: Method::Policy { max_iters: 200 },
            b0: 0.0,
        };
        let sweep = size_sweep(&setup, &[0.0]).unwrap();
        assert_eq!(sweep.points[0].relative_savings, 0.0);
        assert!(sweep.points[0].saturated);
    }

    #[test]
    fn pool_of_one_is_exactly_individual() {
        let steps = GridSteps::default();
        let price = snap_trace(
            &synth_prices(&PriceProfile::residential(), 0.1, 14, 5).unwrap(),
            steps.price_step,
        );
        let (train_price, eval_price) = price.split_at_day(7);
        let demand = snap_trace(&synth_demand(4, 0.1, 14, 6).unwrap(), steps.demand_step);
        let (train_demand, eval_demand) = demand.split_at_day(7);
        let setup = ExperimentSetup {
            train_price: &train_price,
            train_demand: &train_demand,
            eval_price: &eval_price,
            eval_demand: &eval_demand,
            eta_c: 1.0,
            eta_d: 1.0,
            alpha: 0.95,
            steps,
            independent: false,
            method: Method::Policy { max_iters: 200 },
            b0: 0.0,
        };
        let users = PoolUsers {
            train_demands: vec![&train_demand],
            eval_demands: vec![&eval_demand],
        };
        let result = pool(&setup, &users, 8.0).unwrap();
        assert_eq!(result.cost_individual, result.cost_pooled);
        assert!(result.cost_individual <= result.cost_none);
    }

    #[test]
    fn pool_zero_demand_costs_nothing() {
        let steps = GridSteps::default();
        let price = snap_trace(
            &synth_prices(&PriceProfile::residential(), 0.0, 4, 0).unwrap(),
            steps.price_step,
        );
        let (train_price, eval_price) = price.split_at_day(2);
        let zeros = Trace {
            records: train_price
                .records
                .iter()
                .chain(&eval_price.records)
                .map(|r| TraceRecord {
                    timestamp: r.timestamp,
                    value: 0.0,
                })
                .collect(),
        };
        let (train_demand, eval_demand) = zeros.split_at_day(2);
        let setup = ExperimentSetup {
            train_price: &train_price,
            train_demand: &train_demand,
            eval_price: &eval_price,
            eval_demand: &eval_demand,
            eta_c: 1.0,
            eta_d: 1.0,
            alpha: 0.95,
            steps,
            independent: false,
            method: Method::Policy { max_iters: 200 },
            b0: 0.0,
        };
        let users = PoolUsers {
            train_demands: vec![&train_demand, &train_demand],
            eval_demands: vec![&eval_demand, &eval_demand],
        };
        let result = pool(&setup, &users, 4.0).unwrap();
        assert_eq!(result.cost_none, 0.0);
        assert_eq!(result.cost_individual, 0.0);
        assert_eq!(result.cost_pooled, 0.0);
    }

    #[test]
    fn replay_respects_rate_limits() {
        use crate::model::RateLimit;
        let params = crate::model::BatteryParams::ideal(4.0)
            .unwrap()
            .with_rate_limits(RateLimit::Constant(1.0), RateLimit::Constant(0.5))
            .unwrap();
        let mdp = crate::mdp::build_iid(
            &crate::mdp::DiscreteDist::new(vec![(1.0, 0.5), (10.0, 0.5)]).unwrap(),
            &crate::mdp::DiscreteDist::degenerate(1.0),
            params,
            0.9,
        )
        .unwrap();
        let solution = solver::value_iteration(&mdp, 1e-6, 200_000).unwrap();
        let table = extract(&mdp, &solution.policy).unwrap();
        let price = hand_trace(&[1.0, 1.0, 10.0, 10.0, 1.0, 10.0, 1.0, 10.0]);
        let demand = hand_trace(&[1.0; 8]);
        let result = replay(&table, &mdp, &price, &demand, 0.0, 1.0).unwrap();
        let mut previous = 0.0;
        for &level in &result.battery_trajectory {
            // Charge cap 1 kWh/slot, discharge cap 0.5 kWh/slot.
            assert!(level - previous <= 1.0 + 1e-9);
            assert!(previous - level <= 0.5 + 1e-9);
            previous = level;
        }
        assert!(result.operation_count > 0);
    }
}
