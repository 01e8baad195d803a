//! Reusable fixtures and seeded random instances for tests, benchmarks and
//! the acceptance suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{build_iid, build_markov_prices, DiscreteDist, MarkovDemand, Mdp};
use crate::model::BatteryParams;

/// Four-price Markov chain with a cycle that makes the optimal thresholds
/// non-monotone in price: prices 1..4, unit demand, unit battery, fully
/// efficient. From price 1 the next price is 1 or 3 (fair coin); price 2
/// falls to 1, price 3 jumps to 4, price 4 falls to 2. For any discount
/// factor >= 3/4 the optimal thresholds are (1, 0, 1, 0).
pub fn four_price_cycle(alpha: f64) -> Mdp {
    let params = BatteryParams::ideal(1.0).expect("valid params");
    build_markov_prices(
        &[1.0, 2.0, 3.0, 4.0],
        &[
            vec![0.5, 0.0, 0.5, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ],
        &MarkovDemand::Constant(1.0),
        params,
        alpha,
    )
    .expect("fixture is well-formed")
}

/// Expected thresholds of [`four_price_cycle`], in price-level order.
pub const FOUR_PRICE_CYCLE_THRESHOLDS: [f64; 4] = [1.0, 0.0, 1.0, 0.0];

/// Single exogenous state with a constant price: the storage value has the
/// closed form `J(b) = d * p / (1 - alpha) - p * b` whenever the whole
/// battery fits into one slot's demand (`b_max <= d`).
pub fn constant_price(price: f64, demand: f64, b_max: f64, alpha: f64) -> Mdp {
    let params = BatteryParams::ideal(b_max).expect("valid params");
    build_iid(
        &DiscreteDist::degenerate(price),
        &DiscreteDist::degenerate(demand),
        params,
        alpha,
    )
    .expect("fixture is well-formed")
}

/// Shape of the random instances produced by [`random_mdp`].
#[derive(Debug, Clone, Copy, Default)]
pub struct InstanceShape {
    /// Force `eta_c = eta_d = 1` instead of drawing them from [0.6, 1].
    pub efficient: bool,
    /// Restrict to i.i.d. kernels (otherwise i.i.d. and price-driven
    /// Markov kernels are mixed).
    pub iid_only: bool,
}

/// A small random instance: up to 4 price levels, up to 3 demand levels,
/// up to 33 battery levels, discount factor in [0.3, 0.9]. Deterministic
/// in `seed`.
pub fn random_mdp(seed: u64, shape: InstanceShape) -> Mdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_prices = rng.random_range(1..=4usize);
    let mut price_pool: Vec<f64> = (1..=10).map(|i| 0.5 * i as f64).collect();
    let mut prices = Vec::with_capacity(n_prices);
    for _ in 0..n_prices {
        let pick = rng.random_range(0..price_pool.len());
        prices.push(price_pool.swap_remove(pick));
    }
    prices.sort_by(f64::total_cmp);

    let n_demands = rng.random_range(1..=3usize);
    let mut demand_pool: Vec<f64> = (0..=4).map(|i| 0.5 * i as f64).collect();
    let mut demands = Vec::with_capacity(n_demands);
    for _ in 0..n_demands {
        let pick = rng.random_range(0..demand_pool.len());
        demands.push(demand_pool.swap_remove(pick));
    }
    demands.sort_by(f64::total_cmp);
    // All-zero demand makes the problem vacuous; keep at least one slot
    // of real load around.
    if demands.iter().all(|&d| d == 0.0) {
        demands = vec![1.0];
    }

    let b_max = [1.0, 2.0, 4.0, 8.0, 16.0][rng.random_range(0..5)];
    let (eta_c, eta_d) = if shape.efficient {
        (1.0, 1.0)
    } else {
        (rng.random_range(0.6..=1.0), rng.random_range(0.6..=1.0))
    };
    let alpha = rng.random_range(0.3..=0.9);
    let params = BatteryParams::new(b_max, eta_c, eta_d).expect("generated params are valid");

    let demand_dist = random_dist(&mut rng, &demands);
    let use_markov = !shape.iid_only && rng.random_bool(0.5);
    if use_markov && prices.len() > 1 {
        let k = prices.len();
        let transition: Vec<Vec<f64>> = (0..k).map(|_| random_probs(&mut rng, k)).collect();
        build_markov_prices(
            &prices,
            &transition,
            &MarkovDemand::Constant(demands[rng.random_range(0..demands.len())]),
            params,
            alpha,
        )
        .expect("generated chain is well-formed")
    } else {
        let price_dist = random_dist(&mut rng, &prices);
        build_iid(&price_dist, &demand_dist, params, alpha).expect("generated model is well-formed")
    }
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // Force exact normalization so kernel validation stays happy.
    let correction: f64 = 1.0 - probs.iter().sum::<f64>();
    probs[0] += correction;
    probs
}

fn random_dist(rng: &mut ChaCha8Rng, values: &[f64]) -> DiscreteDist {
    let probs = random_probs(rng, values.len());
    DiscreteDist::new(values.iter().copied().zip(probs).collect())
        .expect("generated distribution is normalized")
}
