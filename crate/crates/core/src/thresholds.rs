//! Two-threshold structure of converged policies: extraction from a policy
//! table, the subgradient characterization of the threshold intervals, and
//! analytic certificates for boundary thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{CellWitness, Error};
use crate::mdp::{Mdp, MdpKind};
use crate::solver::{tie_epsilon, Policy, ValueFunction};
use crate::Result;

/// Per-state thresholds: charge up to `beta_minus_kwh` when below it,
/// discharge down to `beta_plus_kwh` when above it, do nothing in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub mode: u16,
    pub price: f64,
    pub demand: f64,
    pub beta_minus_kwh: f64,
    pub beta_plus_kwh: f64,
    /// Whether some policy cell actually charges (otherwise `beta_minus`
    /// is the reporting convention 0, not pinned by the policy).
    #[serde(default, skip_serializing)]
    pub charge_identified: bool,
    /// Whether some policy cell actually discharges (otherwise `beta_plus`
    /// defaults to `b_max`, or collapses onto `beta_minus` for fully
    /// efficient batteries).
    #[serde(default, skip_serializing)]
    pub discharge_identified: bool,
}

/// Thresholds for every exogenous state, in state order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    /// Grid indices of each state's `(beta_minus, beta_plus)`; errors when a
    /// threshold does not lie on the battery grid.
    pub fn level_indices(&self, mdp: &Mdp) -> Result<Vec<(usize, usize)>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(x, entry)| {
                let minus = mdp.grids.level_index(entry.beta_minus_kwh).ok_or_else(|| {
                    Error::invalid(
                        "thresholds",
                        format!(
                            "state {x}: beta_minus {} off the grid",
                            entry.beta_minus_kwh
                        ),
                    )
                })?;
                let plus = mdp.grids.level_index(entry.beta_plus_kwh).ok_or_else(|| {
                    Error::invalid(
                        "thresholds",
                        format!("state {x}: beta_plus {} off the grid", entry.beta_plus_kwh),
                    )
                })?;
                if minus > plus {
                    return Err(Error::invalid(
                        "thresholds",
                        format!("state {x}: beta_minus above beta_plus"),
                    ));
                }
                Ok((minus, plus))
            })
            .collect()
    }
}

/// The policy cell the three-branch rule prescribes for `(b, window)`.
#[inline]
pub(crate) fn threshold_rule(b: usize, minus: usize, plus: usize, lo: usize, hi: usize) -> usize {
    let target = if b < minus {
        minus.min(hi)
    } else if b > plus {
        plus.max(lo)
    } else {
        b
    };
    target.clamp(lo, hi)
}

/// Extract the per-state thresholds that reproduce `policy` exactly.
///
/// For each state the charge threshold is read off the highest charging
/// cell and the discharge threshold off the lowest discharging cell; the
/// candidate pair (with fallbacks for control-set clamping) is then checked
/// to regenerate the whole policy row through the three-branch rule. States
/// that never charge get threshold 0, states that never discharge get
/// `b_max` (collapsed to a single value for fully efficient batteries).
/// A policy no threshold pair can explain yields a structure-violation
/// error listing the offending cells.
pub fn extract(mdp: &Mdp, policy: &Policy) -> Result<ThresholdTable> {
    if mdp.params.replacement.is_some() {
        return Err(Error::PreconditionNotMet(
            "threshold extraction requires the replacement cost to be absent".into(),
        ));
    }
    if mdp.params.xi != 1.0 {
        return Err(Error::PreconditionNotMet(
            "threshold extraction requires no self-discharge (xi = 1)".into(),
        ));
    }
    let windows = crate::solver::ControlWindows::build(mdp)?;
    let n = mdp.n_levels();
    let efficient = mdp.params.eta_c == 1.0 && mdp.params.eta_d == 1.0;

    let mut entries = Vec::with_capacity(mdp.n_states());
    for (x, state) in mdp.states.iter().enumerate() {
        let row = policy.state_targets(x);
        let matches = |minus: usize, plus: usize| -> bool {
            (0..n).all(|b| {
                let (lo, hi) = windows.window(x, b);
                row[b] as usize == threshold_rule(b, minus, plus, lo, hi)
            })
        };

        let highest_charge = (0..n).rev().find(|&b| row[b] as usize > b);
        let lowest_discharge = (0..n).find(|&b| (row[b] as usize) < b);

        let mut minus_candidates: Vec<usize> = Vec::new();
        match highest_charge {
            Some(b) => {
                minus_candidates.push(row[b] as usize);
                // The top charging cell may be clamped by the charge rate;
                // the threshold is then the cell right above it.
                minus_candidates.push((b + 1).min(n - 1));
            }
            None => minus_candidates.push(0),
        }
        let mut plus_candidates: Vec<usize> = Vec::new();
        match lowest_discharge {
            Some(b) => {
                plus_candidates.push(row[b] as usize);
                plus_candidates.push(b.saturating_sub(1));
            }
            None => plus_candidates.push(n - 1),
        }
        minus_candidates.dedup();
        plus_candidates.dedup();

        let mut found: Option<(usize, usize)> = None;
        if efficient {
            // A fully efficient battery has a single threshold; prefer an
            // equal pair so the collapse is exact.
            for &m in minus_candidates.iter().chain(&plus_candidates) {
                if matches(m, m) {
                    found = Some((m, m));
                    break;
                }
            }
        }
        if found.is_none() {
            'outer: for &m in &minus_candidates {
                for &p in &plus_candidates {
                    if m <= p && matches(m, p) {
                        found = Some((m, p));
                        break 'outer;
                    }
                }
            }
        }
        if found.is_none() {
            // Exhaustive fallback: heavily clamped control sets can hide the
            // threshold from the quick candidates.
            'full: for m in 0..n {
                if efficient {
                    if matches(m, m) {
                        found = Some((m, m));
                        break 'full;
                    }
                } else {
                    for p in m..n {
                        if matches(m, p) {
                            found = Some((m, p));
                            break 'full;
                        }
                    }
                }
            }
        }

        let (minus, plus) = match found {
            Some(pair) => pair,
            None => {
                let (m0, p0) = (minus_candidates[0], plus_candidates[0]);
                let witnesses: Vec<CellWitness> = (0..n)
                    .filter_map(|b| {
                        let (lo, hi) = windows.window(x, b);
                        let expected = threshold_rule(b, m0, p0, lo, hi);
                        (row[b] as usize != expected).then(|| CellWitness {
                            state: x,
                            level: b,
                            actual_kwh: mdp.grids.battery_levels[row[b] as usize],
                            expected_kwh: mdp.grids.battery_levels[expected],
                        })
                    })
                    .collect();
                return Err(Error::StructureViolation { witnesses });
            }
        };
        entries.push(ThresholdEntry {
            mode: state.mode,
            price: state.price,
            demand: state.demand,
            beta_minus_kwh: mdp.grids.battery_levels[minus],
            beta_plus_kwh: mdp.grids.battery_levels[plus],
            charge_identified: highest_charge.is_some(),
            discharge_identified: lowest_discharge.is_some(),
        });
    }
    Ok(ThresholdTable { entries })
}

/// Left/right discrete slopes of the expected continuation cost
/// `G_x(beta)` over the battery grid.
///
/// The slope below level 0 is unbounded (nothing sits below an empty
/// battery), represented as negative infinity; beyond capacity the
/// continuation is extended flat, so the right slope at `b_max` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientProfile {
    pub sigma_minus: Vec<f64>,
    pub sigma_plus: Vec<f64>,
    /// Kernel-weighted continuation values this profile was built from.
    pub continuation: Vec<f64>,
}

/// Discrete subgradients of the continuation cost for state `x`.
pub fn subgradient_profile(mdp: &Mdp, values: &ValueFunction, x: usize) -> SubgradientProfile {
    let n = mdp.n_levels();
    let mut g = vec![0.0; n];
    for (y, &w) in mdp.kernel.row(x).iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (acc, &v) in g.iter_mut().zip(values.state_values(y)) {
            *acc += w * v;
        }
    }
    let step = mdp.grids.battery_step;
    let mut sigma_minus = Vec::with_capacity(n);
    let mut sigma_plus = Vec::with_capacity(n);
    for i in 0..n {
        sigma_minus.push(if i == 0 {
            f64::NEG_INFINITY
        } else {
            (g[i] - g[i - 1]) / step
        });
        sigma_plus.push(if i == n - 1 {
            0.0
        } else {
            (g[i + 1] - g[i]) / step
        });
    }
    SubgradientProfile {
        sigma_minus,
        sigma_plus,
        continuation: g,
    }
}

/// Profiles for every state.
pub fn all_profiles(mdp: &Mdp, values: &ValueFunction) -> Vec<SubgradientProfile> {
    (0..mdp.n_states())
        .map(|x| subgradient_profile(mdp, values, x))
        .collect()
}

/// The four interval endpoints characterizing the optimal thresholds of one
/// state: any `beta_minus` in `[beta1_minus, beta2_minus]` paired with any
/// `beta_plus` in `[beta1_plus, beta2_plus]` is optimal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalEntry {
    pub beta1_minus_kwh: f64,
    pub beta2_minus_kwh: f64,
    pub beta1_plus_kwh: f64,
    pub beta2_plus_kwh: f64,
    /// Canonical exposed pair: the widest do-nothing band
    /// `(beta1_minus, beta2_plus)`, minimizing battery operations.
    pub canonical_minus_kwh: f64,
    pub canonical_plus_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdIntervals {
    pub entries: Vec<IntervalEntry>,
}

/// Compute the threshold intervals from subgradient profiles.
///
/// `accuracy` is the sup-norm accuracy of the value table the profiles were
/// built from; slope conditions are slackened accordingly so that
/// numerically tied levels land inside the intervals.
pub fn thresholds_from_subgradients(
    mdp: &Mdp,
    profiles: &[SubgradientProfile],
    accuracy: f64,
) -> Result<ThresholdIntervals> {
    if profiles.len() != mdp.n_states() {
        return Err(Error::invalid("profiles", "need one profile per state"));
    }
    let n = mdp.n_levels();
    let step = mdp.grids.battery_step;
    let levels = &mdp.grids.battery_levels;
    let alpha = mdp.alpha;

    let mut entries = Vec::with_capacity(profiles.len());
    for (x, profile) in profiles.iter().enumerate() {
        let state = &mdp.states[x];
        let charge_unit = state.price / mdp.params.eta_c;
        let discharge_unit = state.price * mdp.params.eta_d;
        let g_max = profile
            .continuation
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let scale = charge_unit * levels[n - 1] + alpha * g_max;
        let slack = 2.0 * tie_epsilon(alpha, accuracy, scale) / step;

        // min of {i : unit + alpha * sigma_plus(i) >= -slack}, else top.
        let first_ge = |unit: f64| -> usize {
            (0..n)
                .find(|&i| unit + alpha * profile.sigma_plus[i] >= -slack)
                .unwrap_or(n - 1)
        };
        // max of {i : unit + alpha * sigma_minus(i) <= slack}, else 0.
        let last_le = |unit: f64| -> usize {
            (0..n)
                .rev()
                .find(|&i| unit + alpha * profile.sigma_minus[i] <= slack)
                .unwrap_or(0)
        };

        let beta1_minus = first_ge(charge_unit);
        let beta2_minus = last_le(charge_unit);
        let beta1_plus = first_ge(discharge_unit);
        let beta2_plus = last_le(discharge_unit);

        // These orderings follow from the set inclusions alone and must
        // hold for any profile.
        if beta1_minus > beta2_minus
            || beta1_plus > beta2_plus
            || beta1_minus > beta1_plus
            || beta2_minus > beta2_plus
        {
            return Err(Error::Inconsistent(format!(
                "state {x}: threshold interval endpoints out of order: \
                 [{beta1_minus}, {beta2_minus}] / [{beta1_plus}, {beta2_plus}]"
            )));
        }
        // The cross ordering beta2_minus <= beta1_plus can only break when
        // the charge and discharge cuts are indistinguishable at this
        // accuracy (e.g. a fully efficient battery with a flat optimum).
        if beta2_minus > beta1_plus {
            let cut_gap = charge_unit - discharge_unit;
            if cut_gap > 2.0 * alpha * slack {
                return Err(Error::Inconsistent(format!(
                    "state {x}: charge interval reaches past the discharge interval \
                     (beta2_minus {} > beta1_plus {}) despite distinct cuts",
                    levels[beta2_minus], levels[beta1_plus]
                )));
            }
        }

        entries.push(IntervalEntry {
            beta1_minus_kwh: levels[beta1_minus],
            beta2_minus_kwh: levels[beta2_minus],
            beta1_plus_kwh: levels[beta1_plus],
            beta2_plus_kwh: levels[beta2_plus],
            canonical_minus_kwh: levels[beta1_minus],
            canonical_plus_kwh: levels[beta2_plus],
        });
    }
    Ok(ThresholdIntervals { entries })
}

/// Check that policy-extracted thresholds lie inside the subgradient
/// intervals, state by state.
///
/// Only thresholds actually pinned by policy cells are checked: a state
/// whose control sets never allow discharging (for example one with zero
/// demand) reveals nothing about its discharge threshold, and the reported
/// convention value need not fall in the interval. For a fully efficient
/// battery one identified side pins the other (the intervals coincide).
pub fn check_interval_containment(
    table: &ThresholdTable,
    intervals: &ThresholdIntervals,
) -> Result<()> {
    for (x, (entry, interval)) in table.entries.iter().zip(&intervals.entries).enumerate() {
        let collapsed = entry.beta_minus_kwh == entry.beta_plus_kwh;
        let any = entry.charge_identified || entry.discharge_identified;
        let check_minus = entry.charge_identified || (collapsed && any);
        let check_plus = entry.discharge_identified || (collapsed && any);
        if check_minus
            && (entry.beta_minus_kwh < interval.beta1_minus_kwh - 1e-9
                || entry.beta_minus_kwh > interval.beta2_minus_kwh + 1e-9)
        {
            return Err(Error::Inconsistent(format!(
                "state {x}: extracted beta_minus {} outside [{}, {}]",
                entry.beta_minus_kwh, interval.beta1_minus_kwh, interval.beta2_minus_kwh
            )));
        }
        if check_plus
            && (entry.beta_plus_kwh < interval.beta1_plus_kwh - 1e-9
                || entry.beta_plus_kwh > interval.beta2_plus_kwh + 1e-9)
        {
            return Err(Error::Inconsistent(format!(
                "state {x}: extracted beta_plus {} outside [{}, {}]",
                entry.beta_plus_kwh, interval.beta1_plus_kwh, interval.beta2_plus_kwh
            )));
        }
    }
    Ok(())
}

/// Analytic certificates that a state's threshold sits at a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundaryCertificate {
    pub state: usize,
    /// Value slopes are everywhere flatter than `p(x) / alpha`: never worth
    /// charging, threshold 0.
    pub certified_zero: bool,
    /// Value slopes are everywhere steeper than `p(x) / alpha`: always
    /// worth charging, threshold `b_max`.
    pub certified_full: bool,
    /// Syntactic sufficient condition: this state's price is the maximum.
    pub max_price: bool,
    /// Syntactic sufficient condition: `alpha < p_min / p_max` (model-wide).
    pub low_alpha: bool,
}

/// Evaluate the boundary-threshold certificates on a converged value table
/// (fully efficient battery only).
///
/// A state is certified to have threshold 0 when
/// `J_y(b1) - J_y(b2) <= (b2 - b1) p(x) / alpha` for all states `y` and all
/// grid pairs `b1 < b2`, and threshold `b_max` under the reversed
/// inequality. Adjacent-pair slopes bound all pairs, so only they are
/// scanned. States certifying both ways are indifferent and constrain
/// nothing.
pub fn boundary_certificates(
    mdp: &Mdp,
    values: &ValueFunction,
    accuracy: f64,
) -> Result<Vec<BoundaryCertificate>> {
    if mdp.params.eta_c != 1.0 || mdp.params.eta_d != 1.0 {
        return Err(Error::PreconditionNotMet(
            "boundary certificates are stated for fully efficient batteries".into(),
        ));
    }
    if mdp.params.replacement.is_some() || mdp.params.xi != 1.0 {
        return Err(Error::PreconditionNotMet(
            "boundary certificates require the plain cost model".into(),
        ));
    }
    let step = mdp.grids.battery_step;
    let slope_slack = 2.0 * accuracy / step + 1e-12;

    let mut max_drop = f64::NEG_INFINITY;
    let mut min_drop = f64::INFINITY;
    for y in 0..mdp.n_states() {
        let row = values.state_values(y);
        for pair in row.windows(2) {
            let drop = (pair[0] - pair[1]) / step;
            max_drop = max_drop.max(drop);
            min_drop = min_drop.min(drop);
        }
    }

    let p_min = mdp.p_min();
    let p_max = mdp.p_max();
    let low_alpha = p_min > 0.0 && mdp.alpha < p_min / p_max;
    Ok((0..mdp.n_states())
        .map(|x| {
            let cut = mdp.states[x].price / mdp.alpha;
            BoundaryCertificate {
                state: x,
                certified_zero: max_drop <= cut + slope_slack,
                certified_full: min_drop >= cut - slope_slack,
                max_price: mdp.states[x].price == p_max,
                low_alpha,
            }
        })
        .collect())
}

/// Assert the certificates against extracted thresholds: a one-sided
/// zero certificate forces threshold 0, a one-sided full certificate
/// forces `b_max`; two-sided (indifferent) certificates force nothing.
pub fn check_certificates(
    mdp: &Mdp,
    table: &ThresholdTable,
    certificates: &[BoundaryCertificate],
) -> Result<()> {
    let b_max = mdp.params.b_max;
    for (entry, cert) in table.entries.iter().zip(certificates) {
        let (zero, full) = (cert.certified_zero, cert.certified_full);
        if zero && !full && (entry.beta_minus_kwh != 0.0 || entry.beta_plus_kwh != 0.0) {
            return Err(Error::Inconsistent(format!(
                "state {} certified threshold 0 but extraction found ({}, {})",
                cert.state, entry.beta_minus_kwh, entry.beta_plus_kwh
            )));
        }
        if full && !zero && (entry.beta_minus_kwh != b_max || entry.beta_plus_kwh != b_max) {
            return Err(Error::Inconsistent(format!(
                "state {} certified threshold {} but extraction found ({}, {})",
                cert.state, b_max, entry.beta_minus_kwh, entry.beta_plus_kwh
            )));
        }
    }
    Ok(())
}

/// For i.i.d. models with a fully efficient battery, thresholds must be
/// non-increasing in price and independent of the demand realization.
/// Fails with a witness pair otherwise; refuses non-i.i.d. models, whose
/// thresholds need not be monotone.
pub fn check_monotonicity(mdp: &Mdp, table: &ThresholdTable) -> Result<()> {
    if mdp.kind != MdpKind::Iid {
        return Err(Error::PreconditionNotMet(
            "price monotonicity of thresholds is only guaranteed for i.i.d. models; \
             Markov-modulated prices admit non-monotone thresholds"
                .into(),
        ));
    }
    if mdp.params.eta_c != 1.0 || mdp.params.eta_d != 1.0 {
        return Err(Error::PreconditionNotMet(
            "price monotonicity is stated for fully efficient batteries".into(),
        ));
    }
    for (i, a) in table.entries.iter().enumerate() {
        for (j, b) in table.entries.iter().enumerate().skip(i + 1) {
            if a.price == b.price && a.beta_minus_kwh != b.beta_minus_kwh {
                return Err(Error::Inconsistent(format!(
                    "states {i} and {j} share price {} but have thresholds {} and {}",
                    a.price, a.beta_minus_kwh, b.beta_minus_kwh
                )));
            }
            let (cheap, dear) = if a.price < b.price { (a, b) } else { (b, a) };
            if cheap.price != dear.price && cheap.beta_minus_kwh < dear.beta_minus_kwh - 1e-12 {
                return Err(Error::Inconsistent(format!(
                    "thresholds increase with price: beta({}) = {} < beta({}) = {}",
                    cheap.price, cheap.beta_minus_kwh, dear.price, dear.beta_minus_kwh
                )));
            }
        }
    }
    Ok(())
}
