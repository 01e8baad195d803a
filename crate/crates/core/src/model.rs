//! Battery model: parameters, dynamics, feasible control sets and per-slot
//! costs.
//!
//! A storage decision is expressed as the battery level `beta` targeted for
//! the next slot. Fixing `beta` fixes the three energy flows of a slot:
//! `a1` (grid to user), `a2` (grid to battery) and `a3` (battery to user).
//! All demand must be met within its slot: `d = a1 + eta_d * a3`, and the
//! battery evolves as `b' = xi * b + eta_c * a2 - a3`.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// State-dependent cap on the energy charged into (or discharged from) the
/// battery in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateLimit {
    /// No cap.
    Unbounded,
    /// The same cap at every battery level.
    Constant(f64),
    /// Piecewise-constant cap: `(level_from_kwh, cap_kwh)` breakpoints,
    /// strictly increasing in level and starting at 0.
    Stepwise(Vec<(f64, f64)>),
}

impl RateLimit {
    /// Cap in kWh at battery level `b`.
    pub fn cap(&self, b: f64) -> f64 {
        match self {
            RateLimit::Unbounded => f64::INFINITY,
            RateLimit::Constant(c) => *c,
            RateLimit::Stepwise(points) => points
                .iter()
                .take_while(|(level, _)| *level <= b)
                .map(|(_, cap)| *cap)
                .last()
                .unwrap_or(0.0),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        match self {
            RateLimit::Unbounded => Ok(()),
            RateLimit::Constant(c) => {
                if c.is_nan() || *c < 0.0 {
                    return Err(Error::invalid(name, format!("cap {c} must be >= 0")));
                }
                Ok(())
            }
            RateLimit::Stepwise(points) => {
                if points.is_empty() || points[0].0 != 0.0 {
                    return Err(Error::invalid(name, "breakpoints must start at level 0"));
                }
                for window in points.windows(2) {
                    if window[1].0 <= window[0].0 {
                        return Err(Error::invalid(name, "breakpoints must strictly increase"));
                    }
                }
                if points.iter().any(|(_, cap)| cap.is_nan() || *cap < 0.0) {
                    return Err(Error::invalid(name, "caps must be >= 0"));
                }
                Ok(())
            }
        }
    }
}

/// Battery replacement modeled as a per-operation breakdown probability `q`
/// and a replacement cost `c`, charged in expectation on every slot that
/// charges or discharges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub q: f64,
    pub c: f64,
}

/// Physical battery parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Usable capacity in kWh.
    pub b_max: f64,
    /// Charging efficiency in (0, 1]: fraction of purchased energy stored.
    pub eta_c: f64,
    /// Discharging efficiency in (0, 1]: fraction of discharged energy
    /// delivered to the user.
    pub eta_d: f64,
    /// Per-slot charge cap as a function of the battery level.
    #[serde(default = "RateLimit::unbounded")]
    pub rate_charge: RateLimit,
    /// Per-slot discharge cap as a function of the battery level.
    #[serde(default = "RateLimit::unbounded")]
    pub rate_discharge: RateLimit,
    /// Self-discharge retention factor in (0, 1]: fraction of stored energy
    /// kept from one slot to the next. 1 means no self-discharge.
    #[serde(default = "one")]
    pub xi: f64,
    /// Optional expected replacement cost per charge/discharge operation.
    #[serde(default)]
    pub replacement: Option<Replacement>,
}

fn one() -> f64 {
    1.0
}

impl RateLimit {
    fn unbounded() -> Self {
        RateLimit::Unbounded
    }
}

impl BatteryParams {
    /// A battery with the given capacity and efficiencies, no rate limits,
    /// no self-discharge and no replacement cost.
    pub fn new(b_max: f64, eta_c: f64, eta_d: f64) -> Result<Self> {
        let params = BatteryParams {
            b_max,
            eta_c,
            eta_d,
            rate_charge: RateLimit::Unbounded,
            rate_discharge: RateLimit::Unbounded,
            xi: 1.0,
            replacement: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// Fully efficient battery of the given capacity.
    pub fn ideal(b_max: f64) -> Result<Self> {
        Self::new(b_max, 1.0, 1.0)
    }

    pub fn with_rate_limits(mut self, charge: RateLimit, discharge: RateLimit) -> Result<Self> {
        self.rate_charge = charge;
        self.rate_discharge = discharge;
        self.validate()?;
        Ok(self)
    }

    pub fn with_self_discharge(mut self, xi: f64) -> Result<Self> {
        self.xi = xi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_replacement(mut self, q: f64, c: f64) -> Result<Self> {
        self.replacement = Some(Replacement { q, c });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b_max.is_finite() || self.b_max <= 0.0 {
            return Err(Error::invalid(
                "b_max",
                format!("{} must be > 0", self.b_max),
            ));
        }
        for (name, eta) in [
            ("eta_c", self.eta_c),
            ("eta_d", self.eta_d),
            ("xi", self.xi),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::invalid(
                    "efficiency",
                    format!("{name} = {eta} not in (0, 1]"),
                ));
            }
        }
        self.rate_charge.validate("rate_charge")?;
        self.rate_discharge.validate("rate_discharge")?;
        if let Some(r) = &self.replacement {
            if !(0.0..=1.0).contains(&r.q) || r.c < 0.0 || !r.c.is_finite() {
                return Err(Error::invalid(
                    "replacement",
                    format!("q = {} must be in [0, 1], c = {} must be >= 0", r.q, r.c),
                ));
            }
        }
        Ok(())
    }

    /// Battery level after self-discharge, before any charging/discharging.
    /// Equals `b` for `xi = 1`.
    pub fn retained(&self, b: f64) -> f64 {
        self.xi * b
    }
}

/// One realization of the exogenous environment: the slot's demand, price
/// and modulating state (e.g. hour of day).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousState {
    /// Demand in kWh, >= 0.
    pub demand: f64,
    /// Price per kWh, >= 0.
    pub price: f64,
    /// Modulating state identifier, e.g. hour of day 0..=23.
    pub mode: u16,
}

impl ExogenousState {
    pub fn new(demand: f64, price: f64, mode: u16) -> Result<Self> {
        if !demand.is_finite() || demand < 0.0 {
            return Err(Error::invalid("demand", format!("{demand} must be >= 0")));
        }
        if !price.is_finite() || price < 0.0 {
            return Err(Error::invalid("price", format!("{price} must be >= 0")));
        }
        Ok(ExogenousState {
            demand,
            price,
            mode,
        })
    }
}

/// The three non-negative energy flows of one slot. Charging and
/// discharging are never combined: `a2 * a3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Energy bought from the grid for immediate use, kWh.
    pub a1: f64,
    /// Energy bought from the grid to charge the battery, kWh.
    pub a2: f64,
    /// Energy discharged from the battery, kWh.
    pub a3: f64,
}

impl Action {
    /// Total energy purchased this slot.
    pub fn purchased(&self) -> f64 {
        self.a1 + self.a2
    }

    /// Whether the battery was operated (charged or discharged).
    pub fn operates(&self) -> bool {
        self.a2 > 0.0 || self.a3 > 0.0
    }
}

/// Closed interval of feasible next-slot battery levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ControlInterval {
    pub fn contains(&self, beta: f64, tol: f64) -> bool {
        beta >= self.lo - tol && beta <= self.hi + tol
    }
}

/// Absolute slack used when testing membership of computed levels in
/// control intervals, scaled to the battery size.
pub fn feasibility_tol(params: &BatteryParams) -> f64 {
    1e-9 * params.b_max.max(1.0)
}

/// Feasible next-level interval from level `b` in state `x`.
///
/// The lower end is limited by how much of the demand the battery can cover
/// (`a1 >= 0` requires `beta >= b - d / eta_d`) and by the discharge cap;
/// the upper end by capacity and the charge cap. The post-self-discharge
/// level (`xi * b`) is always feasible, so doing nothing is always allowed.
pub fn control_set(params: &BatteryParams, x: &ExogenousState, b: f64) -> ControlInterval {
    let eb = params.retained(b);
    let lo = 0.0f64
        .max(eb - x.demand / params.eta_d)
        .max(eb - params.rate_discharge.cap(b));
    let hi = params
        .b_max
        .min(eb + params.eta_c * params.rate_charge.cap(b));
    ControlInterval { lo, hi }
}

/// Split a next-level decision into the three slot flows.
///
/// Returns an error naming the violated bound when `beta` lies outside the
/// control set of `(x, b)`.
pub fn decompose(params: &BatteryParams, x: &ExogenousState, b: f64, beta: f64) -> Result<Action> {
    let interval = control_set(params, x, b);
    let tol = feasibility_tol(params);
    if beta < interval.lo - tol {
        let bound = if interval.lo == 0.0 {
            "lower bound 0"
        } else if (interval.lo - (params.retained(b) - x.demand / params.eta_d)).abs() <= tol {
            "demand coverage bound b - d/eta_d"
        } else {
            "discharge rate bound b - rate_discharge(b)"
        };
        return Err(Error::InfeasibleTarget {
            beta,
            from: b,
            bound,
            value: interval.lo,
        });
    }
    if beta > interval.hi + tol {
        let bound = if (interval.hi - params.b_max).abs() <= tol {
            "capacity bound b_max"
        } else {
            "charge rate bound b + eta_c * rate_charge(b)"
        };
        return Err(Error::InfeasibleTarget {
            beta,
            from: b,
            bound,
            value: interval.hi,
        });
    }

    let eb = params.retained(b);
    let action = if beta > eb {
        Action {
            a1: x.demand,
            a2: (beta - eb) / params.eta_c,
            a3: 0.0,
        }
    } else if beta < eb {
        let a3 = eb - beta;
        // Clamp roundoff so a1 stays non-negative for feasible targets.
        let a1 = (x.demand - params.eta_d * a3).max(0.0);
        Action { a1, a2: 0.0, a3 }
    } else {
        Action {
            a1: x.demand,
            a2: 0.0,
            a3: 0.0,
        }
    };
    Ok(action)
}

/// Per-slot cost of moving the (post-self-discharge) level by `delta` kWh.
///
/// `gamma(delta) = (d + max(delta,0)/eta_c - eta_d * max(-delta,0)) * p`,
/// plus the expected replacement cost when the battery is operated. Equals
/// `(a1 + a2) * p` of the decomposed action.
pub fn immediate_cost(params: &BatteryParams, x: &ExogenousState, delta: f64) -> f64 {
    let charge = delta.max(0.0) / params.eta_c;
    let discharge = (-delta).max(0.0) * params.eta_d;
    let mut cost = (x.demand + charge - discharge) * x.price;
    if let Some(r) = &params.replacement {
        if delta != 0.0 {
            cost += r.q * r.c;
        }
    }
    cost
}

/// Advance the battery one slot under `action`.
///
/// `b' = xi * b + eta_c * a2 - a3`. Errors if the result leaves
/// `[0, b_max]` beyond roundoff (which is then clamped away).
pub fn step(params: &BatteryParams, b: f64, action: &Action) -> Result<f64> {
    let next = params.retained(b) + params.eta_c * action.a2 - action.a3;
    let tol = feasibility_tol(params);
    if next < -tol || next > params.b_max + tol {
        return Err(Error::DynamicsViolation {
            next,
            b_max: params.b_max,
        });
    }
    Ok(next.clamp(0.0, params.b_max))
}
