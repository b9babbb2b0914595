use dealer_sim::adaptive::{
    default_eps_grid, default_x_grid, hedge_cost, optimal_hedge_fraction, skew_cost, skew_side,
    target_market_share_eps, AdaptiveParams, FlowStats, ResponseTable,
};
use dealer_sim::market::{sample_ladder, LobModelParams, Side};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Obs = (usize, usize, f64, f64, f64, f64);

fn observations() -> impl Strategy<Value = Vec<Obs>> {
    prop::collection::vec(
        (
            0usize..21,
            0usize..21,
            0.0f64..12.0,
            0.0f64..12.0,
            0.0f64..20.0,
            0.0f64..20.0,
        ),
        1..60,
    )
}

fn table_from(obs: &[Obs]) -> ResponseTable {
    let grid = default_eps_grid();
    let mut t = ResponseTable::new(grid.clone(), 0.35).unwrap();
    for &(ib, is, bv, sv, sb, ss) in obs {
        t.update(grid[ib], grid[is], bv, sv, sb, ss, 20.0);
    }
    t
}

proptest! {
    #[test]
    fn skew_cost_matches_formula(
        m in -5.0f64..5.0, v in 0.0f64..5.0, fm in -10.0f64..10.0, fv in 0.0f64..10.0,
        z in -50.0f64..50.0, g in 0.0f64..5.0, s in 1e-4f64..0.1, sig in 0.0f64..0.1,
    ) {
        let got = skew_cost(m, v, FlowStats { mean: fm, var: fv }, z, g, s, sig);
        let want = -s * m + g * (s * s * v + sig * sig * (fv + (z + fm).powi(2))).sqrt();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn hedge_cost_matches_formula(
        seed in any::<u64>(), u in 0.0f64..1.0, xi in 0usize..21, long in any::<bool>(),
        fm in -5.0f64..5.0, fv in 0.0f64..5.0, g in 0.0f64..5.0, sig in 0.0f64..0.1, ignore in any::<bool>(),
    ) {
        let ladder = sample_ladder(&LobModelParams::default(), 100.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let z = if long { u * ladder.min_depth() } else { -u * ladder.min_depth() };
        prop_assume!(z != 0.0);
        let x = default_x_grid()[xi];
        let flow = FlowStats { mean: fm, var: fv };
        let got = hedge_cost(x, z, g, sig, &ladder, flow, ignore).unwrap();
        let side = if z > 0.0 { Side::Sell } else { Side::Buy };
        let size = (x * z).abs();
        let walk = (ladder.walk_cost(side, size).unwrap() - size * ladder.mid).abs();
        let (em, ev) = if ignore { (0.0, 0.0) } else { (fm, fv) };
        let want = walk + g * (sig * sig * (ev + (z * (1.0 - x) + em).powi(2))).sqrt();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn skew_offsets_inventory(obs in observations(), star in 0usize..21, z in -30.0f64..30.0, g in 0.0f64..4.0) {
        let t = table_from(&obs);
        let grid = default_eps_grid();
        let eps_star = grid[star];
        let (eb, es) = skew_side(&t, eps_star, z, g, 0.01, 0.01);
        prop_assert!(grid.contains(&eb) && grid.contains(&es));
        prop_assert_eq!(eb.max(es), eps_star);
        if z < 0.0 {
            prop_assert_eq!(es, eps_star);
        } else if z > 0.0 {
            prop_assert_eq!(eb, eps_star);
        } else {
            prop_assert_eq!(eb, es);
        }
    }

    #[test]
    fn market_share_step_is_largest_within_tolerance(obs in observations(), target in 0.05f64..0.95, tol in 0.001f64..0.2) {
        let t = table_from(&obs);
        let params = AdaptiveParams { ms_target: target, delta_tol: tol, ..Default::default() };
        let got = target_market_share_eps(&t, &params, 20.0);
        let grid = default_eps_grid();
        let miss: Vec<f64> = (0..grid.len())
            .map(|i| (target - (t.stats(Side::Buy, i).flow_mean + t.stats(Side::Sell, i).flow_mean) / 20.0).abs())
            .collect();
        let best = miss.iter().copied().fold(f64::INFINITY, f64::min);
        let i = grid.iter().position(|&g| g == got).unwrap();
        prop_assert!(miss[i] <= best + tol + 1e-12);
        prop_assert!(miss[i + 1..].iter().all(|&m| m > best + tol));
    }

    #[test]
    fn ignoring_internalisation_never_hedges_less(
        seed in any::<u64>(), u in 0.01f64..1.0, long in any::<bool>(),
        fm in -10.0f64..10.0, fv in 0.0f64..5.0, g in 0.0f64..8.0, sig in 1e-4f64..0.05,
    ) {
        let ladder = sample_ladder(&LobModelParams::default(), 100.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let z = if long { u * ladder.min_depth() } else { -u * ladder.min_depth() };
        let flow = FlowStats { mean: fm, var: fv };
        let aware = optimal_hedge_fraction(z, g, sig, &ladder, flow, false);
        let naive = optimal_hedge_fraction(z, g, sig, &ladder, flow, true);
        prop_assert!(naive >= aware, "naive {naive} < aware {aware}");
    }
}
