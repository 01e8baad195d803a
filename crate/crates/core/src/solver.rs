//! Bellman backup, value iteration, policy iteration and a finite-horizon
//! oracle for the discretized storage problem.
//!
//! Battery targets are restricted to grid points, so each backup minimizes
//! over at most `n_levels` candidates per cell. Candidate costs factor into
//! per-state arrays
//!
//! ```text
//! charge_score[j]    = (p / eta_c) * level[j] + alpha * G[j]
//! discharge_score[j] = (p * eta_d) * level[j] + alpha * G[j]
//! ```
//!
//! whose minimizers do not depend on the current level `b`. The greedy
//! policy is therefore materialized from two per-state canonical targets
//! (charge up to `t_charge`, discharge down to `t_discharge`) clamped by
//! the control set, which keeps it in two-threshold form cell-for-cell.
//! Near-ties within the solver's own accuracy are resolved toward the
//! higher battery level, so states that are exactly indifferent to
//! charging still report the full-charge target.

use rayon::prelude::*;

use crate::error::Error;
use crate::mdp::Mdp;
use crate::model;
use crate::Result;

/// Default value-iteration tolerance (sup-norm optimality gap, price units).
pub const DEFAULT_TOL: f64 = 1e-6;

/// Sup-norm change at which iterative policy evaluation stops.
pub const EVAL_TOL: f64 = 1e-9;

/// Score margin under which two battery targets count as tied, given that
/// the value table is within `accuracy` (sup-norm) of the exact fixed point
/// and scores have magnitude around `scale`. Kernel averaging propagates a
/// value error of `accuracy` into a score error of at most
/// `alpha * accuracy`; the factor 4 covers a difference of two scores with
/// headroom, and the floor absorbs bare roundoff.
pub(crate) fn tie_epsilon(alpha: f64, accuracy: f64, scale: f64) -> f64 {
    4.0 * alpha * accuracy + 1e-12 * (1.0 + scale)
}

/// Tabulated total discounted costs `J[x][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
    n_states: usize,
    n_levels: usize,
}

impl ValueFunction {
    pub fn zeros(n_states: usize, n_levels: usize) -> Self {
        ValueFunction {
            values: vec![0.0; n_states * n_levels],
            n_states,
            n_levels,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn get(&self, x: usize, b: usize) -> f64 {
        self.values[x * self.n_levels + b]
    }

    /// Values over the battery grid for state `x`.
    pub fn state_values(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_levels..(x + 1) * self.n_levels]
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Build from per-state rows (used when loading artifacts).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_levels = rows.first().map(|r| r.len()).unwrap_or(0);
        if n_states == 0 || n_levels == 0 || rows.iter().any(|r| r.len() != n_levels) {
            return Err(Error::invalid(
                "value function",
                "rows must be non-empty and rectangular",
            ));
        }
        Ok(ValueFunction {
            values: rows.into_iter().flatten().collect(),
            n_states,
            n_levels,
        })
    }
}

/// Tabulated battery targets `beta*[x][b]` as grid indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    targets: Vec<u32>,
    n_states: usize,
    n_levels: usize,
}

impl Policy {
    /// The policy that never operates the battery.
    pub fn do_nothing(n_states: usize, n_levels: usize) -> Self {
        let mut targets = Vec::with_capacity(n_states * n_levels);
        for _ in 0..n_states {
            targets.extend(0..n_levels as u32);
        }
        Policy {
            targets,
            n_states,
            n_levels,
        }
    }

    pub fn from_targets(targets: Vec<u32>, n_states: usize, n_levels: usize) -> Result<Self> {
        if targets.len() != n_states * n_levels {
            return Err(Error::invalid("policy", "target table has wrong size"));
        }
        if targets.iter().any(|t| *t as usize >= n_levels) {
            return Err(Error::invalid("policy", "target outside battery grid"));
        }
        Ok(Policy {
            targets,
            n_states,
            n_levels,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Grid index targeted from `(x, b)`.
    pub fn target(&self, x: usize, b: usize) -> usize {
        self.targets[x * self.n_levels + b] as usize
    }

    pub fn state_targets(&self, x: usize) -> &[u32] {
        &self.targets[x * self.n_levels..(x + 1) * self.n_levels]
    }
}

/// A converged solve: values, greedy policy and the iterations spent.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
}

/// Feasible battery-grid index window for every `(x, b)` cell.
#[derive(Debug, Clone)]
pub(crate) struct ControlWindows {
    lo: Vec<u32>,
    hi: Vec<u32>,
    n_levels: usize,
}

impl ControlWindows {
    pub(crate) fn build(mdp: &Mdp) -> Result<Self> {
        let n_levels = mdp.n_levels();
        let levels = &mdp.grids.battery_levels;
        let step = mdp.grids.battery_step;
        let slack = 1e-9 * mdp.params.b_max.max(1.0);
        let mut lo = Vec::with_capacity(mdp.n_states() * n_levels);
        let mut hi = Vec::with_capacity(mdp.n_states() * n_levels);
        for x in &mdp.states {
            for (b_idx, &b) in levels.iter().enumerate() {
                let interval = model::control_set(&mdp.params, x, b);
                let mut lo_idx = ((interval.lo - slack) / step).ceil() as i64;
                let mut hi_idx = ((interval.hi + slack) / step).floor() as i64;
                lo_idx = lo_idx.clamp(0, n_levels as i64 - 1);
                hi_idx = hi_idx.clamp(0, n_levels as i64 - 1);
                if mdp.params.xi == 1.0 {
                    // Doing nothing is always feasible.
                    lo_idx = lo_idx.min(b_idx as i64);
                    hi_idx = hi_idx.max(b_idx as i64);
                } else if lo_idx > hi_idx {
                    return Err(Error::invalid(
                        "control set",
                        format!(
                            "no grid level is feasible from level {b} kWh (self-discharge too \
                             coarse for the battery grid)"
                        ),
                    ));
                }
                lo.push(lo_idx as u32);
                hi.push(hi_idx as u32);
            }
        }
        Ok(ControlWindows { lo, hi, n_levels })
    }

    #[inline]
    pub(crate) fn window(&self, x: usize, b: usize) -> (usize, usize) {
        let i = x * self.n_levels + b;
        (self.lo[i] as usize, self.hi[i] as usize)
    }
}

/// Reusable per-solve context.
pub(crate) struct SolverCtx<'a> {
    mdp: &'a Mdp,
    windows: ControlWindows,
    /// Scores have a simple threshold shape only without replacement cost
    /// and without self-discharge.
    structured: bool,
}

impl<'a> SolverCtx<'a> {
    pub(crate) fn new(mdp: &'a Mdp) -> Result<Self> {
        let windows = ControlWindows::build(mdp)?;
        let structured = mdp.params.replacement.is_none() && mdp.params.xi == 1.0;
        Ok(SolverCtx {
            mdp,
            windows,
            structured,
        })
    }

    /// Kernel-weighted continuation values, one array per distinct kernel
    /// row: `cont[r][j] = sum_y row_r(y) * J[y][j]`.
    fn continuations(&self, j: &ValueFunction) -> Vec<Vec<f64>> {
        let n_levels = j.n_levels;
        self.mdp
            .kernel
            .distinct_rows()
            .par_iter()
            .map(|row| {
                let mut acc = vec![0.0; n_levels];
                for (y, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let jy = j.state_values(y);
                    for (a, &v) in acc.iter_mut().zip(jy) {
                        *a += w * v;
                    }
                }
                acc
            })
            .collect()
    }

    /// One Bellman sweep: exact candidate-scan minimum per cell.
    fn backup_values(&self, j: &ValueFunction) -> ValueFunction {
        let cont = self.continuations(j);
        let n_levels = j.n_levels;
        let mut out = ValueFunction::zeros(j.n_states, n_levels);
        let mdp = self.mdp;
        out.values
            .par_chunks_mut(n_levels)
            .enumerate()
            .for_each(|(x, out_row)| {
                let g = &cont[mdp.kernel.row_id(x)];
                let state = &mdp.states[x];
                let p = state.price;
                let dp = state.demand * p;
                let charge_unit = p / mdp.params.eta_c;
                let discharge_unit = p * mdp.params.eta_d;
                let alpha = mdp.alpha;
                let levels = &mdp.grids.battery_levels;
                let operate_cost = mdp.params.replacement.map(|r| r.q * r.c).unwrap_or(0.0);
                for b_idx in 0..n_levels {
                    let (lo, hi) = self.windows.window(x, b_idx);
                    let base = mdp.params.retained(levels[b_idx]);
                    let mut best = f64::INFINITY;
                    for j_idx in lo..=hi {
                        let delta = levels[j_idx] - base;
                        let gamma = if delta > 0.0 {
                            charge_unit * delta + operate_cost
                        } else if delta < 0.0 {
                            discharge_unit * delta + operate_cost
                        } else {
                            0.0
                        };
                        let cost = dp + gamma + alpha * g[j_idx];
                        if cost < best {
                            best = cost;
                        }
                    }
                    out_row[b_idx] = best;
                }
            });
        out
    }

    /// Greedy policy for `j`, assuming `j` is within `accuracy` (sup-norm)
    /// of the exact fixed point it approximates. Candidates whose scores
    /// differ by less than the noise this induces are treated as tied and
    /// resolved toward the higher level.
    fn greedy_policy(&self, j: &ValueFunction, accuracy: f64) -> Policy {
        let cont = self.continuations(j);
        self.greedy_policy_with(&cont, accuracy)
    }

    fn greedy_policy_with(&self, cont: &[Vec<f64>], accuracy: f64) -> Policy {
        let mdp = self.mdp;
        let n_levels = mdp.n_levels();
        let mut targets = vec![0u32; mdp.n_states() * n_levels];
        targets
            .par_chunks_mut(n_levels)
            .enumerate()
            .for_each(|(x, row)| {
                let g = &cont[mdp.kernel.row_id(x)];
                if self.structured {
                    self.canonical_targets(x, g, accuracy, row);
                } else {
                    self.scan_targets(x, g, row);
                }
            });
        Policy {
            targets,
            n_states: mdp.n_states(),
            n_levels,
        }
    }

    /// Two canonical targets per state, from the score arrays.
    ///
    /// `t_charge` is the highest level still worth charging to (ties kept),
    /// `t_discharge` the highest level discharging stops at. Every cell of
    /// the greedy policy is then the three-branch rule clamped by the
    /// control window.
    fn canonical_targets(&self, x: usize, g: &[f64], accuracy: f64, out: &mut [u32]) {
        let mdp = self.mdp;
        let state = &mdp.states[x];
        let alpha = mdp.alpha;
        let charge_unit = state.price / mdp.params.eta_c;
        let discharge_unit = state.price * mdp.params.eta_d;
        let levels = &mdp.grids.battery_levels;
        let n = levels.len();

        let g_max = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let scale = charge_unit * levels[n - 1] + alpha * g_max;
        let tie = tie_epsilon(alpha, accuracy, scale);

        let highest_near_min = |unit: f64| -> usize {
            let mut min = f64::INFINITY;
            for (j, &level) in levels.iter().enumerate() {
                let score = unit * level + alpha * g[j];
                if score < min {
                    min = score;
                }
                debug_assert!(score.is_finite(), "score at level {j} not finite");
            }
            let mut pick = 0;
            for (j, &level) in levels.iter().enumerate() {
                if unit * level + alpha * g[j] <= min + tie {
                    pick = j;
                }
            }
            pick
        };

        let t_discharge = highest_near_min(discharge_unit);
        let t_charge = highest_near_min(charge_unit).min(t_discharge);

        for (b_idx, slot) in out.iter_mut().enumerate() {
            let (lo, hi) = self.windows.window(x, b_idx);
            let target = if b_idx < t_charge {
                t_charge.min(hi)
            } else if b_idx > t_discharge {
                t_discharge.max(lo)
            } else {
                b_idx
            };
            *slot = target.clamp(lo, hi) as u32;
        }
    }

    /// Plain candidate-scan argmin (smallest index on exact ties); used
    /// when replacement cost or self-discharge voids the threshold shape.
    fn scan_targets(&self, x: usize, g: &[f64], out: &mut [u32]) {
        let mdp = self.mdp;
        let state = &mdp.states[x];
        let p = state.price;
        let charge_unit = p / mdp.params.eta_c;
        let discharge_unit = p * mdp.params.eta_d;
        let alpha = mdp.alpha;
        let levels = &mdp.grids.battery_levels;
        let operate_cost = mdp.params.replacement.map(|r| r.q * r.c).unwrap_or(0.0);
        for (b_idx, slot) in out.iter_mut().enumerate() {
            let (lo, hi) = self.windows.window(x, b_idx);
            let base = mdp.params.retained(levels[b_idx]);
            let mut best = f64::INFINITY;
            let mut best_j = lo;
            for j_idx in lo..=hi {
                let delta = levels[j_idx] - base;
                let gamma = if delta > 0.0 {
                    charge_unit * delta + operate_cost
                } else if delta < 0.0 {
                    discharge_unit * delta + operate_cost
                } else {
                    0.0
                };
                let cost = gamma + alpha * g[j_idx];
                if cost < best {
                    best = cost;
                    best_j = j_idx;
                }
            }
            *slot = best_j as u32;
        }
    }

    /// Evaluate a fixed policy by iterating its own Bellman operator until
    /// the sup-norm change drops to `inner_tol`.
    fn evaluate(
        &self,
        policy: &Policy,
        inner_tol: f64,
        warm: Option<&ValueFunction>,
        max_sweeps: usize,
    ) -> Result<ValueFunction> {
        let mdp = self.mdp;
        let n_levels = mdp.n_levels();
        let n_states = mdp.n_states();

        // Immediate cost of each cell's prescribed move, fixed per policy.
        let mut gamma = vec![0.0; n_states * n_levels];
        for x in 0..n_states {
            let state = &mdp.states[x];
            for b_idx in 0..n_levels {
                let base = mdp.grids.battery_levels[b_idx];
                let target = mdp.grids.battery_levels[policy.target(x, b_idx)];
                let delta = target - mdp.params.retained(base);
                gamma[x * n_levels + b_idx] = model::immediate_cost(&mdp.params, state, delta);
            }
        }

        let mut j = warm
            .cloned()
            .unwrap_or_else(|| ValueFunction::zeros(n_states, n_levels));
        for _sweep in 0..max_sweeps {
            let cont = self.continuations(&j);
            let mut next = ValueFunction::zeros(n_states, n_levels);
            next.values
                .par_chunks_mut(n_levels)
                .enumerate()
                .for_each(|(x, row)| {
                    let g = &cont[mdp.kernel.row_id(x)];
                    for (b_idx, slot) in row.iter_mut().enumerate() {
                        *slot =
                            gamma[x * n_levels + b_idx] + mdp.alpha * g[policy.target(x, b_idx)];
                    }
                });
            let residual = j.sup_distance(&next);
            j = next;
            if residual <= inner_tol {
                return Ok(j);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_sweeps,
            residual: f64::NAN,
        })
    }
}

/// One synchronous Bellman backup of `j`, together with the policy
/// attaining it.
pub fn bellman_backup(mdp: &Mdp, j: &ValueFunction) -> Result<(ValueFunction, Policy)> {
    let ctx = SolverCtx::new(mdp)?;
    let values = ctx.backup_values(j);
    let policy = ctx.greedy_policy(j, 0.0);
    Ok((values, policy))
}

/// Iterate Bellman backups from `J = 0` until the sup-norm change
/// guarantees an optimality gap of at most `tol`, then extract the greedy
/// policy of the final iterate.
pub fn value_iteration(mdp: &Mdp, tol: f64, max_iters: usize) -> Result<Solution> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::invalid("tol", format!("{tol} must be > 0")));
    }
    let ctx = SolverCtx::new(mdp)?;
    let threshold = tol * (1.0 - mdp.alpha) / (2.0 * mdp.alpha);
    let mut j = ValueFunction::zeros(mdp.n_states(), mdp.n_levels());
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iters {
        let next = ctx.backup_values(&j);
        residual = j.sup_distance(&next);
        j = next;
        if residual <= threshold {
            let policy = ctx.greedy_policy(&j, tol / 2.0);
            return Ok(Solution {
                values: j,
                policy,
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Alternate exact policy evaluation with greedy improvement, starting
/// from the do-nothing policy, until the policy stops changing.
pub fn policy_iteration(mdp: &Mdp, max_iters: usize) -> Result<Solution> {
    let ctx = SolverCtx::new(mdp)?;
    let eval_accuracy = EVAL_TOL * mdp.alpha / (1.0 - mdp.alpha);
    let mut policy = Policy::do_nothing(mdp.n_states(), mdp.n_levels());
    let mut values: Option<ValueFunction> = None;
    let mut stalled = 0usize;
    for iteration in 1..=max_iters {
        let j = ctx.evaluate(&policy, EVAL_TOL, values.as_ref(), 5_000_000)?;
        let improved = ctx.greedy_policy(&j, eval_accuracy);
        let unchanged = improved == policy;
        // Tie noise can flip between policies of equal value; treat a
        // stalled value function as converged as well.
        if let Some(prev) = &values {
            if prev.sup_distance(&j) <= 1e-10 * (1.0 + j.max_abs()) {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        values = Some(j);
        if unchanged || stalled >= 2 {
            return Ok(Solution {
                values: values.expect("evaluated at least once"),
                policy,
                iterations: iteration,
            });
        }
        policy = improved;
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// Exact minimal `horizon`-slot discounted cost, by backward recursion
/// from the all-zero terminal value.
pub fn finite_horizon_oracle(mdp: &Mdp, horizon: usize) -> Result<ValueFunction> {
    let ctx = SolverCtx::new(mdp)?;
    let mut j = ValueFunction::zeros(mdp.n_states(), mdp.n_levels());
    for _ in 0..horizon {
        j = ctx.backup_values(&j);
    }
    Ok(j)
}

/// Total discounted cost of following `policy` forever, to within
/// `inner_tol` sup-norm change.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy, inner_tol: f64) -> Result<ValueFunction> {
    let ctx = SolverCtx::new(mdp)?;
    ctx.evaluate(policy, inner_tol, None, 5_000_000)
}
