mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use railprice_core::market_power::{
    cournot_best_response, cournot_equilibrium, grid_search, lambda_of, markup_sweep, monopoly_optimum, stackelberg_chain,
    QuadraticMarket,
};
use railprice_core::{solve_perfect, QuadraticConsumer, QuadraticProducer, SolverSettings, Tariffs};

fn market(b: f64, a: f64, pb: f64, pa: f64, c: f64, cap: f64) -> Option<QuadraticMarket> {
    let peak = b / (2.0 * a);
    let m = QuadraticMarket::new(
        QuadraticConsumer::new(b, -a, peak.min(cap)).ok()?,
        QuadraticProducer::new(pb, pa, cap).ok()?,
        c,
    )
    .ok()?;
    m.check_unsaturated().ok()?;
    Some(m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn monopoly_halves_flow(b in 10.0f64..40.0, a in 0.2f64..2.0, pb in 0.5f64..5.0, pa in 0.2f64..2.0, c in 0.5f64..4.0) {
        let Some(m) = market(b, a, pb, pa, c, 1e3) else { return Ok(()) };
        let o = monopoly_optimum(&m).unwrap();
        prop_assert!((o.flow / o.competitive_flow - 0.5).abs() <= 1e-9);
        prop_assert!((o.theta - 2.0 / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn stackelberg_tariff_exceeds_monopoly(b in 10.0f64..40.0, a in 0.2f64..2.0, pb in 0.5f64..5.0, pa in 0.2f64..2.0, c in 0.5f64..4.0) {
        let Some(m) = market(b, a, pb, pa, c, 1e3) else { return Ok(()) };
        if let Ok(s) = stackelberg_chain(&m) {
            prop_assert!(s.tariff > s.monopoly_tariff);
            prop_assert!(s.exceeds_monopoly);
            // Grid oracle on the stated transport demand.
            let profit = |t: f64| (t - m.base_cost) * railprice_core::market_power::stackelberg_demand(&m, t);
            let (t_grid, _) = grid_search(profit, m.base_cost, m.consumer.b + m.producer.b, 200_001).unwrap();
            prop_assert!((t_grid - s.tariff).abs() <= 1e-3 * (1.0 + s.tariff));
        }
    }
}

#[test]
fn cournot_law_and_oracle() {
    let m = QuadraticMarket::desk();
    for n in 1..=50u64 {
        let c = cournot_equilibrium(&m, n).unwrap();
        let nf = n as f64;
        assert!((c.outcome.theta - 2.0 * nf / (2.0 * nf + 1.0)).abs() <= 1e-9, "n={n}");
        let br = cournot_best_response(&m, n as usize, 1e-13, 1_000_000);
        assert!(br.converged, "n={n}");
        assert!((br.total - c.outcome.flow).abs() <= 1e-8, "n={n}: {} vs {}", br.total, c.outcome.flow);
    }
    let mono = monopoly_optimum(&m).unwrap();
    assert!((cournot_equilibrium(&m, 1).unwrap().outcome.flow - mono.flow).abs() <= 1e-12);
}

#[test]
fn lambda_is_convex_with_flow_subgradient() {
    let settings = SolverSettings::default();
    for seed in 0..12u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..6);
        let (net, agents) = common::random_instance(&mut rng, stations, 1, 0.0);
        let base = Tariffs::base(&net);
        let lam = |s: f64| lambda_of(&net, &agents, &base.shifted(s), &settings).unwrap();
        let grid: Vec<f64> = (0..9).map(|k| k as f64 * 1.5).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| lam(s)).collect();
        for w in vals.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9, "seed {seed}: {w:?}");
        }
        // dΛ/ds = −total flow for a uniform shift.
        let h = 1e-4;
        for &s in &[0.5, 3.0, 6.0] {
            let fd = (lam(s + h) - lam(s - h)) / (2.0 * h);
            let z = solve_perfect(&net, &agents, &base.shifted(s), &settings).unwrap().total_flow();
            assert!((fd + z).abs() <= 1e-3, "seed {seed} s {s}: {fd} vs {z}");
        }
    }
}

#[test]
fn intermediary_profit_bounded_by_welfare_loss() {
    let settings = SolverSettings::default();
    let markups: Vec<f64> = (0..=20).map(|k| k as f64 * 0.75).collect();
    for seed in 0..12u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..6);
        let (net, agents) = common::random_instance(&mut rng, stations, 2, 0.0);
        for p in markup_sweep(&net, &agents, &Tariffs::base(&net), &markups, &settings).unwrap() {
            assert!(p.intermediary_profit <= p.welfare_loss + 1e-7 * (1.0 + p.welfare_loss), "seed {seed}: {p:?}");
        }
    }
}
