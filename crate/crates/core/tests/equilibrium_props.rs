mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use railprice_core::agents::{fenchel_roundtrip_cost, fenchel_roundtrip_revenue, uniform_grid};
use railprice_core::{
    certify_routes, equilibrium_report, solve_capacitated, solve_perfect, AgentSpec, Capacity, NetworkBuilder, QuadraticConsumer,
    QuadraticProducer, Resource, SolverSettings, Tariffs,
};

const DUALITY_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fenchel_roundtrip(b in 5.0f64..40.0, a in 0.2f64..3.0, frac in 0.3f64..1.0, pb in 0.5f64..5.0, pa in 0.2f64..3.0, pcap in 1.0f64..20.0) {
        let peak = b / (2.0 * a);
        let f = QuadraticConsumer::new(b, -a, peak * frac).unwrap();
        let g = QuadraticProducer::new(pb, pa, pcap).unwrap();
        prop_assert!(fenchel_roundtrip_revenue(&f, &uniform_grid(f.cap, 41)) <= 1e-8);
        prop_assert!(fenchel_roundtrip_cost(&g, &uniform_grid(g.cap, 41)) <= 1e-8);
    }
}

#[test]
fn strong_duality_on_random_networks() {
    let settings = SolverSettings::default();
    for seed in 0..40u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..7);
        let comm = rng.gen_range(1..3);
        let (net, agents) = common::random_instance(&mut rng, stations, comm, 0.0);
        let sol = solve_perfect(&net, &agents, &Tariffs::base(&net), &settings).unwrap();
        assert!(sol.relative_gap() <= DUALITY_TOL, "seed {seed}: gap {}", sol.relative_gap());
        assert!(sol.residuals.passes(RESIDUAL_TOL), "seed {seed}: {:?}", sol.residuals);
    }
}

#[test]
fn strong_duality_with_capacities() {
    let settings = SolverSettings::default();
    for seed in 100..140u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..7);
        let comm = rng.gen_range(1..3);
        let (net, agents) = common::random_instance(&mut rng, stations, comm, 0.4);
        let sol = solve_capacitated(&net, &agents, &settings).unwrap();
        let gap = sol.equilibrium.relative_gap();
        assert!(gap <= DUALITY_TOL, "seed {seed}: gap {gap}");
        let r = equilibrium_report(&sol, &net, &agents);
        assert!(r.passes(RESIDUAL_TOL), "seed {seed}: {r:?}");
        assert!(certify_routes(&sol, &net).passed(), "seed {seed}");
    }
}

#[test]
fn single_pair_closed_form() {
    // z = (b − B − c̃)/(2(A − a)) when unsaturated.
    let settings = SolverSettings::default();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..50 {
        let f = common::random_consumer(&mut rng);
        let g = common::random_producer(&mut rng);
        let c = rng.gen_range(0.5..4.0);
        let mut b = NetworkBuilder::new();
        let s = b.station("S", 0.0, Capacity::Unlimited);
        let t = b.station("T", 0.0, Capacity::Unlimited);
        b.link(s, t, c, Capacity::Unlimited);
        b.producer("P", s);
        b.consumer("C", t);
        b.commodity("k");
        let net = b.build().unwrap();
        let agents = AgentSpec::single(&net, f, g).unwrap();
        let sol = solve_perfect(&net, &agents, &Tariffs::base(&net), &settings).unwrap();
        let z = ((f.b - g.b - c) / (2.0 * (g.a - f.a))).clamp(0.0, f.cap.min(g.cap));
        assert!((sol.total_flow() - z).abs() < 1e-7, "{} vs {z}", sol.total_flow());
        if z > 1e-6 && z < f.cap.min(g.cap) - 1e-6 {
            let p = sol.consumer_prices[0][0];
            let q = sol.producer_prices[0][0];
            assert!((p - (f.b + 2.0 * f.a * z)).abs() < 1e-7);
            assert!((p - q - c).abs() < 1e-7);
        }
    }
}

#[test]
fn capacity_relaxation_is_monotone() {
    let settings = SolverSettings::default();
    let mut prev = f64::NEG_INFINITY;
    for v in [0.5, 1.0, 2.0, 3.0, 4.0, 6.0] {
        let (net, agents) = common::q1(Capacity::Finite(v));
        let sol = solve_capacitated(&net, &agents, &settings).unwrap();
        assert!(sol.equilibrium.primal_value >= prev - 1e-9);
        prev = sol.equilibrium.primal_value;
        let t = sol.link_surcharge(0);
        let expected = (16.0 - 4.0 * v).max(0.0);
        assert!((t - expected).abs() < 1e-6, "V={v}: t={t}");
    }
}

#[test]
fn parallel_links_share_scarce_capacity() {
    let mut b = NetworkBuilder::new();
    let s = b.station("S", 0.0, Capacity::Unlimited);
    let t = b.station("T", 0.0, Capacity::Unlimited);
    b.link(s, t, 2.0, Capacity::Finite(1.0));
    b.link(s, t, 2.0, Capacity::Finite(1.0));
    b.producer("P", s);
    b.consumer("C", t);
    b.commodity("grain");
    let net = b.build().unwrap();
    let (_, agents) = common::q1(Capacity::Unlimited);
    let agents = AgentSpec::new(&net, agents.consumers, agents.producers).unwrap();
    let sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
    assert!((sol.equilibrium.total_flow() - 2.0).abs() < 1e-7);
    for l in 0..2 {
        assert!((sol.link_surcharge(l) - 8.0).abs() < 1e-6);
        assert!((sol.load(Resource::Link(l)) - 1.0).abs() < 1e-6);
    }
    assert!((sol.intermediary_profit(&net) - 16.0).abs() < 1e-6);
}

#[test]
fn six_station_routes_certified() {
    let mut b = NetworkBuilder::new();
    let st: Vec<usize> = (0..6).map(|s| b.station(&format!("S{s}"), 0.25, Capacity::Unlimited)).collect();
    let edges = [(0, 1, 1.0, 2.0), (1, 5, 1.0, 2.0), (0, 2, 1.5, 9.0), (2, 5, 1.5, 9.0), (0, 3, 1.0, 1.5), (3, 4, 0.5, 9.0), (4, 5, 0.5, 9.0), (1, 2, 0.2, 9.0)];
    for (u, v, c, cap) in edges {
        b.link(st[u], st[v], c, Capacity::Finite(cap));
    }
    b.producer("P", st[0]);
    b.consumer("C", st[5]);
    b.commodity("ore");
    let net = b.build().unwrap();
    let agents = AgentSpec::single(
        &net,
        QuadraticConsumer::new(30.0, -1.0, 15.0).unwrap(),
        QuadraticProducer::new(1.0, 0.5, 20.0).unwrap(),
    )
    .unwrap();
    let sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
    let cert = certify_routes(&sol, &net);
    assert!(cert.exhaustive && cert.passed(), "{cert:?}");
    assert!(cert.checked_routes >= 2);
    assert!(equilibrium_report(&sol, &net, &agents).passes(RESIDUAL_TOL));
}
