//! Property tests for the battery model and the discretized process.

use battctl_core::mdp::{build_iid, cell_index, snap_to_step, DiscreteDist};
use battctl_core::model::{
    control_set, decompose, immediate_cost, step, BatteryParams, ExogenousState,
};
use proptest::prelude::*;

fn params_strategy() -> impl Strategy<Value = BatteryParams> {
    (1..=32u32, 0.5f64..=1.0, 0.5f64..=1.0).prop_map(|(half_kwh, eta_c, eta_d)| {
        BatteryParams::new(f64::from(half_kwh) * 0.5, eta_c, eta_d).unwrap()
    })
}

fn state_strategy() -> impl Strategy<Value = ExogenousState> {
    (0.0f64..=4.0, 0.0f64..=50.0)
        .prop_map(|(demand, price)| ExogenousState::new(demand, price, 0).unwrap())
}

proptest! {
    #[test]
    fn control_set_contains_current_level(
        params in params_strategy(),
        x in state_strategy(),
        frac in 0.0f64..=1.0,
    ) {
        let b = frac * params.b_max;
        let interval = control_set(&params, &x, b);
        prop_assert!(interval.lo <= interval.hi + 1e-12);
        prop_assert!(interval.contains(b, 1e-9 * params.b_max.max(1.0)));
    }

    #[test]
    fn decompose_round_trips_through_step(
        params in params_strategy(),
        x in state_strategy(),
        b_frac in 0.0f64..=1.0,
        beta_frac in 0.0f64..=1.0,
    ) {
        let b = b_frac * params.b_max;
        let interval = control_set(&params, &x, b);
        let beta = interval.lo + beta_frac * (interval.hi - interval.lo);
        let action = decompose(&params, &x, b, beta).unwrap();
        prop_assert!(action.a1 >= 0.0 && action.a2 >= 0.0 && action.a3 >= 0.0);
        prop_assert!(!(action.a2 > 0.0 && action.a3 > 0.0));
        // Demand is met exactly.
        prop_assert!((action.a1 + params.eta_d * action.a3 - x.demand).abs() < 1e-9);
        // Stepping the action reproduces the target.
        let next = step(&params, b, &action).unwrap();
        prop_assert!((next - beta).abs() < 1e-9);
        // The cost identity gamma(delta) = (a1 + a2) * p.
        let cost = immediate_cost(&params, &x, beta - b);
        prop_assert!((cost - action.purchased() * x.price).abs() < 1e-8 * (1.0 + cost.abs()));
    }

    #[test]
    fn immediate_cost_convex_increasing(
        params in params_strategy(),
        x in state_strategy(),
    ) {
        let deltas: Vec<f64> =
            (-20..=20).map(|i| f64::from(i) / 20.0 * params.b_max).collect();
        let costs: Vec<f64> = deltas.iter().map(|d| immediate_cost(&params, &x, *d)).collect();
        for w in costs.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10);
        }
        for w in costs.windows(3) {
            prop_assert!(w[2] - w[1] >= w[1] - w[0] - 1e-9 * (1.0 + w[1].abs()));
        }
    }

    #[test]
    fn snapping_is_idempotent_and_half_up(value in -10.0f64..=1000.0, step_i in 1..=20u32) {
        let step = f64::from(step_i) * 0.25;
        let snapped = snap_to_step(value, step);
        prop_assert_eq!(snap_to_step(snapped, step), snapped);
        prop_assert!((snapped / step).fract().abs() < 1e-9);
        prop_assert!((snapped - value).abs() <= step / 2.0 + 1e-9);
        prop_assert_eq!(cell_index(snapped, step), (snapped / step).round() as i64);
    }

    #[test]
    fn iid_kernel_rows_are_product_measures(
        p1 in 0.05f64..=0.95,
        d1 in 0.05f64..=0.95,
    ) {
        let params = BatteryParams::ideal(1.0).unwrap();
        let price = DiscreteDist::new(vec![(1.0, p1), (2.0, 1.0 - p1)]).unwrap();
        let demand = DiscreteDist::new(vec![(0.5, d1), (1.0, 1.0 - d1)]).unwrap();
        let mdp = build_iid(&price, &demand, params, 0.9).unwrap();
        for x in 0..mdp.n_states() {
            let row = mdp.kernel.row(x);
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        prop_assert_eq!(mdp.kernel.row(0), mdp.kernel.row(mdp.n_states() - 1));
    }
}

#[test]
fn random_instances_have_valid_kernels() {
    for seed in 0..40 {
        let mdp = battctl_core::testkit::random_mdp(seed, Default::default());
        for x in 0..mdp.n_states() {
            let row = mdp.kernel.row(x);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "seed {seed}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
