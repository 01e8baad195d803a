//! Discretized decision process: grids, exogenous-state enumeration and
//! transition kernels.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::HourlyEmpirical;
use crate::model::{BatteryParams, ExogenousState};
use crate::Result;

/// Tolerance on probability normalization.
pub const PROB_TOL: f64 = 1e-9;

/// Round `value` to the nearest multiple of `step`, halves rounding up.
/// Idempotent on values already on the grid.
pub fn snap_to_step(value: f64, step: f64) -> f64 {
    if step <= 0.0 {
        return value;
    }
    (value / step + 0.5).floor() * step
}

/// Integer cell index of `value` on a `step`-spaced grid (half-up).
pub fn cell_index(value: f64, step: f64) -> i64 {
    (value / step + 0.5).floor() as i64
}

/// A discrete probability distribution over scalar values.
///
/// Values are sorted ascending, duplicates merged, zero-probability atoms
/// dropped; probabilities must sum to 1 within [`PROB_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms
            .iter()
            .any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0)
        {
            return Err(Error::invalid(
                "distribution",
                "atoms must be finite with prob >= 0",
            ));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(
                "distribution",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            if p == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some((last_v, last_p)) if *last_v == v => *last_p += p,
                _ => merged.push((v, p)),
            }
        }
        if merged.is_empty() {
            return Err(Error::invalid(
                "distribution",
                "no atoms with positive probability",
            ));
        }
        Ok(DiscreteDist { atoms: merged })
    }

    /// Point mass at `value`.
    pub fn degenerate(value: f64) -> Self {
        DiscreteDist {
            atoms: vec![(value, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|(v, _)| *v)
    }
}

/// The discretization grids of the decision process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    /// Battery levels 0, step, ..., b_max (uniform).
    pub battery_levels: Vec<f64>,
    pub battery_step: f64,
    /// Sorted distinct price levels.
    pub price_levels: Vec<f64>,
    pub price_step: f64,
    /// Sorted distinct demand levels.
    pub demand_levels: Vec<f64>,
    pub demand_step: f64,
    /// Modulating-state identifiers.
    pub modes: Vec<u16>,
}

impl Grids {
    /// Uniform battery grid from 0 to `b_max` in steps of `step`.
    /// `b_max` must be a whole number of steps.
    pub fn battery_grid(b_max: f64, step: f64) -> Result<Vec<f64>> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::invalid(
                "battery_step",
                format!("{step} must be > 0"),
            ));
        }
        let n = b_max / step;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(Error::invalid(
                "battery grid",
                format!("b_max = {b_max} is not a positive multiple of step {step}"),
            ));
        }
        let n = n.round() as usize;
        Ok((0..=n).map(|i| i as f64 * step).collect())
    }

    pub fn new(
        b_max: f64,
        battery_step: f64,
        price_levels: Vec<f64>,
        price_step: f64,
        demand_levels: Vec<f64>,
        demand_step: f64,
        modes: Vec<u16>,
    ) -> Result<Self> {
        let battery_levels = Self::battery_grid(b_max, battery_step)?;
        for (name, levels) in [
            ("price_levels", &price_levels),
            ("demand_levels", &demand_levels),
        ] {
            if levels.is_empty() {
                return Err(Error::invalid(name, "must not be empty"));
            }
            if levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(name, "must be strictly increasing"));
            }
        }
        if modes.is_empty() {
            return Err(Error::invalid("modes", "must not be empty"));
        }
        Ok(Grids {
            battery_levels,
            battery_step,
            price_levels,
            price_step,
            demand_levels,
            demand_step,
            modes,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.battery_levels.len()
    }

    pub fn b_max(&self) -> f64 {
        *self
            .battery_levels
            .last()
            .expect("battery grid is never empty")
    }

    /// Grid index of a battery level, if it lies on the grid (within 1e-9).
    pub fn level_index(&self, kwh: f64) -> Option<usize> {
        let idx = (kwh / self.battery_step).round();
        if idx < 0.0 || idx as usize >= self.battery_levels.len() {
            return None;
        }
        let idx = idx as usize;
        ((self.battery_levels[idx] - kwh).abs() <= 1e-9 * self.b_max().max(1.0)).then_some(idx)
    }

    /// Smallest gap between adjacent levels, used to scale nearest-cell
    /// lookups; falls back to 1 for singleton grids.
    fn min_gap(levels: &[f64]) -> f64 {
        levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            .clamp(f64::MIN_POSITIVE, f64::MAX)
    }
}

/// Row-sharing transition kernel over exogenous-state indices.
///
/// Many models give the same next-state distribution to whole groups of
/// states (all of them for i.i.d. models, one group per price level for
/// price-driven chains, one per hour for hourly models). Rows are stored
/// once and shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    rows: Vec<Vec<f64>>,
    row_of: Vec<usize>,
}

impl TransitionKernel {
    pub fn new(rows: Vec<Vec<f64>>, row_of: Vec<usize>, n_states: usize) -> Result<Self> {
        if row_of.len() != n_states {
            return Err(Error::invalid(
                "kernel",
                "row_of length must equal state count",
            ));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_states {
                return Err(Error::invalid(
                    "kernel",
                    format!("row {r} has wrong length"),
                ));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(
                    "kernel",
                    format!("row {r} has negative entries"),
                ));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::invalid("kernel", format!("row {r} sums to {total}")));
            }
        }
        if row_of.iter().any(|r| *r >= rows.len()) {
            return Err(Error::invalid("kernel", "row_of references missing row"));
        }
        Ok(TransitionKernel { rows, row_of })
    }

    /// Transition probabilities out of state `x`.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[self.row_of[x]]
    }

    pub fn row_id(&self, x: usize) -> usize {
        self.row_of[x]
    }

    pub fn distinct_rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_distinct_rows(&self) -> usize {
        self.rows.len()
    }
}

/// How the exogenous process was constructed; some analytic checks only
/// apply to particular kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpKind {
    /// Prices and demands i.i.d. across slots.
    Iid,
    /// Next-slot distribution depends on the current price level only.
    MarkovPrices,
    /// Hour-of-day modulated, independent across hours.
    Hourly,
}

/// The discretized decision process.
#[derive(Debug, Clone)]
pub struct Mdp {
    pub params: BatteryParams,
    pub grids: Grids,
    pub kernel: TransitionKernel,
    /// Discount factor in (0, 1).
    pub alpha: f64,
    /// One entry per (demand, price, mode) cell with positive mass.
    pub states: Vec<ExogenousState>,
    pub kind: MdpKind,
}

impl Mdp {
    pub fn new(
        params: BatteryParams,
        grids: Grids,
        kernel: TransitionKernel,
        alpha: f64,
        states: Vec<ExogenousState>,
        kind: MdpKind,
    ) -> Result<Self> {
        params.validate()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1)")));
        }
        if states.is_empty() {
            return Err(Error::invalid("states", "must not be empty"));
        }
        if kernel.row_of.len() != states.len() {
            return Err(Error::invalid("kernel", "state count mismatch"));
        }
        if (grids.b_max() - params.b_max).abs() > 1e-9 * params.b_max.max(1.0) {
            return Err(Error::invalid("grids", "battery grid must end at b_max"));
        }
        Ok(Mdp {
            params,
            grids,
            kernel,
            alpha,
            states,
            kind,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_levels(&self) -> usize {
        self.grids.n_levels()
    }

    pub fn p_max(&self) -> f64 {
        self.states.iter().map(|s| s.price).fold(0.0, f64::max)
    }

    pub fn p_min(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.price)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn d_max(&self) -> f64 {
        self.states.iter().map(|s| s.demand).fold(0.0, f64::max)
    }

    /// Upper bound on any total discounted cost:
    /// `p_max * (d_max + b_max / eta_c) / (1 - alpha)`.
    pub fn value_upper_bound(&self) -> f64 {
        self.p_max() * (self.d_max() + self.params.b_max / self.params.eta_c) / (1.0 - self.alpha)
    }

    /// Sample a state-index path of `len` slots starting from `x0`,
    /// deterministically from `seed`.
    pub fn sample_path(&self, x0: usize, len: usize, seed: u64) -> Vec<usize> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut path = Vec::with_capacity(len);
        let mut x = x0;
        for _ in 0..len {
            path.push(x);
            let row = self.kernel.row(x);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (y, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = y;
                    break;
                }
            }
            x = next;
        }
        path
    }
}

fn sorted_dedup(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

/// Build an i.i.d. model: every slot draws an independent (price, demand)
/// pair from the product of the two marginals. Single modulating state.
pub fn build_iid(
    price_dist: &DiscreteDist,
    demand_dist: &DiscreteDist,
    params: BatteryParams,
    alpha: f64,
) -> Result<Mdp> {
    let mut states = Vec::new();
    let mut probs = Vec::new();
    for &(price, pp) in price_dist.atoms() {
        for &(demand, pd) in demand_dist.atoms() {
            states.push(ExogenousState::new(demand, price, 0)?);
            probs.push(pp * pd);
        }
    }
    let n = states.len();
    let kernel = TransitionKernel::new(vec![probs], vec![0; n], n)?;
    let price_levels = sorted_dedup(price_dist.values().collect());
    let demand_levels = sorted_dedup(demand_dist.values().collect());
    let price_step = Grids::min_gap(&price_levels);
    let demand_step = Grids::min_gap(&demand_levels);
    let grids = Grids::new(
        params.b_max,
        default_battery_step(params.b_max),
        price_levels,
        price_step,
        demand_levels,
        demand_step,
        vec![0],
    )?;
    Mdp::new(params, grids, kernel, alpha, states, MdpKind::Iid)
}

/// Demand model for price-driven chains.
#[derive(Debug, Clone)]
pub enum MarkovDemand {
    /// The same demand in every slot.
    Constant(f64),
    /// One demand distribution per price level, drawn on arrival.
    PerPrice(Vec<DiscreteDist>),
}

/// Build a model whose next-slot distribution depends only on the current
/// price level: `transition[i][j]` is the probability of moving from price
/// `price_levels[i]` to `price_levels[j]`.
pub fn build_markov_prices(
    price_levels: &[f64],
    transition: &[Vec<f64>],
    demand: &MarkovDemand,
    params: BatteryParams,
    alpha: f64,
) -> Result<Mdp> {
    let k = price_levels.len();
    if k == 0 {
        return Err(Error::invalid("price_levels", "must not be empty"));
    }
    if transition.len() != k {
        return Err(Error::invalid(
            "transition",
            "must be square over price levels",
        ));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid(
                "transition",
                format!("row {i} has wrong length"),
            ));
        }
        if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid(
                "transition",
                format!("row {i} has negative entries"),
            ));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(
                "transition",
                format!("row {i} sums to {total}"),
            ));
        }
    }
    let demand_dists: Vec<DiscreteDist> = match demand {
        MarkovDemand::Constant(d) => vec![DiscreteDist::degenerate(*d); k],
        MarkovDemand::PerPrice(dists) => {
            if dists.len() != k {
                return Err(Error::invalid(
                    "demand",
                    "need one distribution per price level",
                ));
            }
            dists.clone()
        }
    };

    // States ordered price-major, demand-minor.
    let mut states = Vec::new();
    let mut state_price_idx = Vec::new();
    for (i, &price) in price_levels.iter().enumerate() {
        for (demand, _) in demand_dists[i].atoms() {
            states.push(ExogenousState::new(*demand, price, 0)?);
            state_price_idx.push(i);
        }
    }
    let n = states.len();
    let mut rows = Vec::with_capacity(k);
    for transition_row in transition {
        let mut row = vec![0.0; n];
        for (y, state) in states.iter().enumerate() {
            let j = state_price_idx[y];
            let pd = demand_dists[j]
                .atoms()
                .iter()
                .find(|(v, _)| *v == state.demand)
                .map(|(_, p)| *p)
                .unwrap_or(0.0);
            row[y] = transition_row[j] * pd;
        }
        rows.push(row);
    }
    let kernel = TransitionKernel::new(rows, state_price_idx.clone(), n)?;

    let sorted_prices = sorted_dedup(price_levels.to_vec());
    if sorted_prices.len() != k {
        return Err(Error::invalid("price_levels", "must be distinct"));
    }
    let demand_levels = sorted_dedup(demand_dists.iter().flat_map(|d| d.values()).collect());
    let price_step = Grids::min_gap(&sorted_prices);
    let demand_step = Grids::min_gap(&demand_levels);
    let grids = Grids::new(
        params.b_max,
        default_battery_step(params.b_max),
        sorted_prices,
        price_step,
        demand_levels,
        demand_step,
        vec![0],
    )?;
    Mdp::new(params, grids, kernel, alpha, states, MdpKind::MarkovPrices)
}

/// Build an hour-of-day modulated model from per-hour empirical joint
/// (price, demand) distributions: the hour is the modulating state and the
/// next slot's (price, demand) is drawn from the next hour's distribution,
/// independently of the current realization.
pub fn build_hourly(empirical: &HourlyEmpirical, params: BatteryParams, alpha: f64) -> Result<Mdp> {
    empirical.validate()?;

    // States ordered (hour, price, demand).
    let mut states = Vec::new();
    let mut state_mass = Vec::new();
    for hour in 0..24u16 {
        let mut cells = empirical.hour(hour as usize).to_vec();
        cells.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite cells"));
        for ((price, demand), mass) in cells {
            if mass > 0.0 {
                states.push(ExogenousState::new(demand, price, hour)?);
                state_mass.push(mass);
            }
        }
    }
    let n = states.len();

    // One kernel row per hour: the distribution of the following hour.
    let mut rows = vec![vec![0.0; n]; 24];
    for (y, state) in states.iter().enumerate() {
        let prev_hour = (state.mode + 23) % 24;
        rows[prev_hour as usize][y] = state_mass[y];
    }
    let row_of: Vec<usize> = states.iter().map(|s| s.mode as usize).collect();
    let kernel = TransitionKernel::new(rows, row_of, n)?;

    let price_levels = sorted_dedup(states.iter().map(|s| s.price).collect());
    let demand_levels = sorted_dedup(states.iter().map(|s| s.demand).collect());
    let grids = Grids::new(
        params.b_max,
        empirical.demand_step(),
        price_levels,
        empirical.price_step(),
        demand_levels,
        empirical.demand_step(),
        (0..24).collect(),
    )?;
    Mdp::new(params, grids, kernel, alpha, states, MdpKind::Hourly)
}

fn default_battery_step(b_max: f64) -> f64 {
    // Prefer the conventional 0.5 kWh resolution; fall back to a uniform
    // 16-cell grid when b_max is not a multiple of it.
    if (b_max / 0.5 - (b_max / 0.5).round()).abs() <= 1e-9 {
        0.5
    } else {
        b_max / 16.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(atoms: &[(f64, f64)]) -> DiscreteDist {
        DiscreteDist::new(atoms.to_vec()).unwrap()
    }

    #[test]
    fn snap_rounds_half_up_and_is_idempotent() {
        assert_eq!(snap_to_step(7.3, 5.0), 5.0);
        assert_eq!(snap_to_step(7.5, 5.0), 10.0);
        assert_eq!(snap_to_step(-0.2, 0.5), 0.0);
        let snapped = snap_to_step(1.23, 0.5);
        assert_eq!(snap_to_step(snapped, 0.5), snapped);
    }

    #[test]
    fn iid_two_price_example() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_iid(
            &dist(&[(1.0, 0.5), (3.0, 0.5)]),
            &dist(&[(1.0, 1.0)]),
            params,
            0.9,
        )
        .unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.kernel.row(0), &[0.5, 0.5]);
        assert_eq!(mdp.kernel.row(1), &[0.5, 0.5]);
        assert_eq!(mdp.kernel.n_distinct_rows(), 1);
    }

    #[test]
    fn iid_degenerate_price() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_iid(&dist(&[(2.0, 1.0)]), &dist(&[(1.0, 1.0)]), params, 0.5).unwrap();
        assert_eq!(mdp.n_states(), 1);
        assert_eq!(mdp.kernel.row(0), &[1.0]);
    }

    #[test]
    fn iid_product_measure() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_iid(
            &dist(&[(1.0, 0.25), (2.0, 0.75)]),
            &dist(&[(0.0, 0.5), (1.0, 0.5)]),
            params,
            0.9,
        )
        .unwrap();
        assert_eq!(mdp.n_states(), 4);
        assert_eq!(mdp.kernel.row(2), &[0.125, 0.125, 0.375, 0.375]);
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        assert!(DiscreteDist::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(DiscreteDist::new(vec![(1.0, -0.5), (2.0, 1.5)]).is_err());
    }

    #[test]
    fn markov_price_rows_depend_on_price_only() {
        let params = BatteryParams::ideal(2.0).unwrap();
        let mdp = build_markov_prices(
            &[1.0, 2.0],
            &[vec![0.7, 0.3], vec![0.3, 0.7]],
            &MarkovDemand::PerPrice(vec![dist(&[(0.5, 0.5), (1.0, 0.5)]), dist(&[(1.0, 1.0)])]),
            params,
            0.9,
        )
        .unwrap();
        // Two demand atoms at price 1, one at price 2.
        assert_eq!(mdp.n_states(), 3);
        assert_eq!(mdp.kernel.n_distinct_rows(), 2);
        assert_eq!(mdp.kernel.row(0), mdp.kernel.row(1));
        assert_eq!(mdp.kernel.row(0), &[0.35, 0.35, 0.3]);
        assert_eq!(mdp.kernel.row(2), &[0.15, 0.15, 0.7]);
    }

    #[test]
    fn markov_rejects_non_stochastic_matrix() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let err = build_markov_prices(
            &[1.0, 2.0],
            &[vec![0.7, 0.4], vec![0.3, 0.7]],
            &MarkovDemand::Constant(1.0),
            params,
            0.9,
        );
        assert!(err.is_err());
    }

    #[test]
    fn identity_matrix_gives_absorbing_prices() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_markov_prices(
            &[1.0, 3.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &MarkovDemand::Constant(1.0),
            params,
            0.9,
        )
        .unwrap();
        assert_eq!(mdp.kernel.row(0), &[1.0, 0.0]);
        assert_eq!(mdp.kernel.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn alpha_bounds_enforced() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let p = dist(&[(1.0, 1.0)]);
        let d = dist(&[(1.0, 1.0)]);
        assert!(build_iid(&p, &d, params.clone(), 1.0).is_err());
        assert!(build_iid(&p, &d, params, 0.0).is_err());
    }

    #[test]
    fn battery_grid_alignment() {
        assert_eq!(Grids::battery_grid(1.0, 0.5).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(Grids::battery_grid(1.1, 0.5).is_err());
        assert!(Grids::battery_grid(0.0, 0.5).is_err());
        let g = Grids::battery_grid(16.0, 0.5).unwrap();
        assert_eq!(g.len(), 33);
        assert_eq!(*g.last().unwrap(), 16.0);
    }

    #[test]
    fn level_index_round_trips() {
        let params = BatteryParams::ideal(4.0).unwrap();
        let mdp = build_iid(&dist(&[(1.0, 1.0)]), &dist(&[(1.0, 1.0)]), params, 0.5).unwrap();
        for (i, &level) in mdp.grids.battery_levels.iter().enumerate() {
            assert_eq!(mdp.grids.level_index(level), Some(i));
        }
        assert_eq!(mdp.grids.level_index(0.3), None);
        assert_eq!(mdp.grids.level_index(-0.5), None);
        assert_eq!(mdp.grids.level_index(99.0), None);
    }

    fn uniform_hourly(cells: Vec<((f64, f64), f64)>) -> crate::ingest::HourlyEmpirical {
        let steps = crate::ingest::GridSteps {
            price_step: 1.0,
            demand_step: 0.5,
        };
        crate::ingest::HourlyEmpirical::new(vec![cells; 24], &steps).unwrap()
    }

    #[test]
    fn hourly_with_identical_hours_matches_iid_rows() {
        let params = BatteryParams::ideal(2.0).unwrap();
        let cells = vec![((1.0, 1.0), 0.25), ((3.0, 1.0), 0.75)];
        let hourly = build_hourly(&uniform_hourly(cells), params.clone(), 0.9).unwrap();
        let iid = build_iid(
            &dist(&[(1.0, 0.25), (3.0, 0.75)]),
            &dist(&[(1.0, 1.0)]),
            params,
            0.9,
        )
        .unwrap();
        assert_eq!(hourly.n_states(), 24 * iid.n_states());
        assert_eq!(hourly.kernel.n_distinct_rows(), 24);
        // Each hourly row puts the i.i.d. masses on the next hour's copies.
        for x in 0..hourly.n_states() {
            let row = hourly.kernel.row(x);
            let hour = hourly.states[x].mode;
            let next = (hour + 1) % 24;
            let mut masses = Vec::new();
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    assert_eq!(hourly.states[y].mode, next);
                    masses.push((hourly.states[y].price, p));
                }
            }
            assert_eq!(masses, vec![(1.0, 0.25), (3.0, 0.75)]);
        }
    }

    #[test]
    fn hourly_alternating_prices_form_deterministic_cycle() {
        let steps = crate::ingest::GridSteps {
            price_step: 1.0,
            demand_step: 0.5,
        };
        let hours: Vec<Vec<((f64, f64), f64)>> = (0..24)
            .map(|h| vec![((if h % 2 == 0 { 1.0 } else { 2.0 }, 1.0), 1.0)])
            .collect();
        let empirical = crate::ingest::HourlyEmpirical::new(hours, &steps).unwrap();
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_hourly(&empirical, params, 0.9).unwrap();
        assert_eq!(mdp.n_states(), 24);
        for x in 0..24 {
            let row = mdp.kernel.row(x);
            let nonzero: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(y, _)| y)
                .collect();
            assert_eq!(nonzero.len(), 1);
            let y = nonzero[0];
            assert_eq!(mdp.states[y].mode, (mdp.states[x].mode + 1) % 24);
            let expected_price = if mdp.states[y].mode.is_multiple_of(2) {
                1.0
            } else {
                2.0
            };
            assert_eq!(mdp.states[y].price, expected_price);
        }
    }

    #[test]
    fn hourly_rows_depend_only_on_mode() {
        let params = BatteryParams::ideal(2.0).unwrap();
        let cells = vec![((1.0, 0.5), 0.3), ((2.0, 0.5), 0.3), ((2.0, 1.0), 0.4)];
        let mdp = build_hourly(&uniform_hourly(cells), params, 0.9).unwrap();
        for a in 0..mdp.n_states() {
            for b in 0..mdp.n_states() {
                if mdp.states[a].mode == mdp.states[b].mode {
                    assert_eq!(mdp.kernel.row_id(a), mdp.kernel.row_id(b));
                }
            }
        }
    }

    #[test]
    fn sample_path_is_deterministic() {
        let params = BatteryParams::ideal(1.0).unwrap();
        let mdp = build_iid(
            &dist(&[(1.0, 0.3), (2.0, 0.7)]),
            &dist(&[(1.0, 1.0)]),
            params,
            0.9,
        )
        .unwrap();
        let a = mdp.sample_path(0, 50, 42);
        let b = mdp.sample_path(0, 50, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|&x| x < mdp.n_states()));
    }
}
