mod common;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use railprice_core::network::{enumerate_routes, Network};
use railprice_core::potential::{
    entropy_solve, frank_wolfe, logit_dynamics, potential_gradient, potential_value, solve_smoothed, CostFamily, EntropyOptions,
    FwOptions, LogitOptions, NewtonOptions, PathFlowState, PathVar, ShareOption, Smoothing,
};
use railprice_core::{solve_capacitated, AgentSpec, Capacity, NetworkBuilder, QuadraticConsumer, QuadraticProducer, SolverSettings};

const FAMILIES: [CostFamily; 3] = [CostFamily::Power, CostFamily::Log, CostFamily::SteepPower];

/// Every route of every pair and commodity, with random flows kept inside
/// agent capacities and strictly below every finite capacity.
fn random_state(rng: &mut StdRng, net: &Network, agents: &AgentSpec, s: Smoothing) -> PathFlowState {
    let mut st = PathFlowState::new(s);
    for j in 0..net.producers().len() {
        for i in 0..net.consumers().len() {
            for k in 0..net.n_commodities() {
                for route in enumerate_routes(net, j, i).unwrap() {
                    st.paths.push(PathVar { route, commodity: k });
                    st.flows.push(rng.gen_range(0.0..1.0));
                }
            }
        }
    }
    // Scale so no capacity, consumer cap or producer cap is reached.
    let mut worst: f64 = 0.0;
    for r in net.capacitated_resources() {
        worst = worst.max(st.load(r) / net.capacity(r).finite().unwrap());
    }
    for (i, row) in st.pair_flows(net).iter().enumerate() {
        for k in 0..net.n_commodities() {
            let x: f64 = row.iter().map(|v| v[k]).sum();
            worst = worst.max(x / agents.revenue(i, k).unwrap().cap);
        }
    }
    let scale = 0.8 / worst.max(1e-9);
    st.flows.iter_mut().for_each(|x| *x *= scale.min(1.0) * rng.gen_range(0.2..1.0));
    st
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..30u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..6);
        let comm = rng.gen_range(1..3);
        let (net, agents) = common::random_instance(&mut rng, stations, comm, 0.5);
        let fam = FAMILIES[seed as usize % 3];
        let s = Smoothing::new(fam, rng.gen_range(0.2..0.9), rng.gen_range(0.5..2.0)).unwrap();
        let st = random_state(&mut rng, &net, &agents, s);
        let g = potential_gradient(&st, &net, &agents).unwrap();
        for p in 0..st.flows.len() {
            if st.flows[p] < 2.0 * h {
                continue;
            }
            let mut up = st.clone();
            up.flows[p] += h;
            let mut dn = st.clone();
            dn.flows[p] -= h;
            let fd = (potential_value(&up, &net, &agents).unwrap() - potential_value(&dn, &net, &agents).unwrap()) / (2.0 * h);
            assert!((fd - g[p]).abs() <= 1e-5 * (1.0 + g[p].abs()), "seed {seed} path {p}: {fd} vs {}", g[p]);
        }
    }
}

#[test]
fn potential_is_midpoint_convex() {
    let mut checked = 0;
    for seed in 0..1000u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let (net, agents) = common::random_instance(&mut rng, 4, 1, 0.5);
        let s = Smoothing::new(FAMILIES[seed as usize % 3], rng.gen_range(0.1..1.0), 1.0).unwrap();
        let a = random_state(&mut rng, &net, &agents, s);
        let mut b = a.clone();
        let mut rng2 = StdRng::seed_from_u64(seed + 10_000);
        let other = random_state(&mut rng2, &net, &agents, s);
        b.flows = other.flows;
        let mut mid = a.clone();
        mid.flows = a.flows.iter().zip(&b.flows).map(|(x, y)| 0.5 * (x + y)).collect();
        let (va, vb, vm) = (
            potential_value(&a, &net, &agents).unwrap(),
            potential_value(&b, &net, &agents).unwrap(),
            potential_value(&mid, &net, &agents).unwrap(),
        );
        assert!(vm <= 0.5 * (va + vb) + 1e-9 * (1.0 + va.abs() + vb.abs()), "seed {seed}");
        checked += 1;
    }
    assert_eq!(checked, 1000);
}

#[test]
fn frank_wolfe_potential_decreases() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let stations = rng.gen_range(3..6);
        let (net, agents) = common::random_instance(&mut rng, stations, 1, 0.5);
        let s = Smoothing::new(CostFamily::SteepPower, 0.2, 1.0).unwrap();
        let r = frank_wolfe(&net, &agents, s, &FwOptions { max_iter: 300, tol: 1e-12, polish: false }).unwrap();
        for w in r.potentials.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()), "seed {seed}");
        }
        assert!(r.gap <= r.gaps[0]);
    }
}

fn desk_instances() -> Vec<(Network, AgentSpec)> {
    let mut out = vec![common::q1(Capacity::Finite(2.0)), common::q1(Capacity::Finite(3.0))];
    let mut b = NetworkBuilder::new();
    let st: Vec<usize> = (0..4).map(|s| b.station(&format!("S{s}"), 0.5, Capacity::Unlimited)).collect();
    b.link(st[0], st[1], 1.0, Capacity::Finite(2.0));
    b.link(st[1], st[3], 1.0, Capacity::Unlimited);
    b.link(st[0], st[2], 2.0, Capacity::Unlimited);
    b.link(st[2], st[3], 1.0, Capacity::Finite(3.0));
    b.producer("P", st[0]);
    b.consumer("C", st[3]);
    b.commodity("ore");
    let net = b.build().unwrap();
    let agents = AgentSpec::single(
        &net,
        QuadraticConsumer::new(30.0, -1.0, 15.0).unwrap(),
        QuadraticProducer::new(1.0, 0.5, 20.0).unwrap(),
    )
    .unwrap();
    out.push((net, agents));
    out
}

#[test]
fn smoothed_limit_matches_capacitated_flows() {
    let s = Smoothing::new(CostFamily::SteepPower, 1e-5, 1.0).unwrap();
    for (n, (net, agents)) in desk_instances().iter().enumerate() {
        let cap = solve_capacitated(net, agents, &SolverSettings::default()).unwrap();
        let sm = solve_smoothed(net, agents, s, &NewtonOptions::default()).unwrap();
        assert!(sm.converged, "instance {n}");
        let a = sm.state.pair_flows(net);
        let diff = a
            .iter()
            .flatten()
            .flatten()
            .zip(cap.equilibrium.flows.iter().flatten().flatten())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-2, "instance {n}: {diff}");
    }
}

#[test]
fn log_family_approaches_capacity_from_below() {
    let (net, agents) = common::q1(Capacity::Finite(2.0));
    let mut prev = 0.0;
    for mu in [2.0, 1.0, 0.5] {
        let s = Smoothing::new(CostFamily::Log, mu, 1.0).unwrap();
        let r = frank_wolfe(&net, &agents, s, &FwOptions { polish: true, ..FwOptions::default() }).unwrap();
        let f = r.state.total_flow();
        assert!(f < 2.0 && f > prev, "mu {mu}: {f}");
        prev = f;
    }
}

fn two_parallel_links() -> (Network, AgentSpec) {
    let mut b = NetworkBuilder::new();
    let s = b.station("S", 0.0, Capacity::Unlimited);
    let t = b.station("T", 0.0, Capacity::Unlimited);
    b.link(s, t, 2.0, Capacity::Finite(3.0));
    b.link(s, t, 2.0, Capacity::Finite(3.0));
    b.producer("P", s);
    b.consumer("C", t);
    b.commodity("grain");
    let net = b.build().unwrap();
    let (_, a) = common::q1(Capacity::Unlimited);
    let agents = AgentSpec::new(&net, a.consumers, a.producers).unwrap();
    (net, agents)
}

#[test]
fn symmetric_paths_share_equally() {
    let (net, agents) = two_parallel_links();
    let s = Smoothing::new(CostFamily::SteepPower, 0.2, 1.0).unwrap();
    for eta in [1e-3, 0.1, 1.0, 10.0] {
        let e = entropy_solve(&net, &agents, eta, s, &EntropyOptions::default()).unwrap();
        let paths: Vec<f64> = e.options.iter().zip(&e.shares).filter(|(o, _)| matches!(o, ShareOption::Path(_))).map(|(_, v)| *v).collect();
        assert_eq!(paths.len(), 2);
        assert!((paths[0] - paths[1]).abs() < 1e-9, "eta {eta}: {paths:?}");
        assert!(e.kkt_residual <= 1e-6);
    }
    let l = logit_dynamics(&net, &agents, 0.5, s, &LogitOptions { steps: 500, ..LogitOptions::default() }).unwrap();
    let paths: Vec<f64> = l.terminal.shares[..2].to_vec();
    assert!((paths[0] - paths[1]).abs() < 1e-12);
}

#[test]
fn large_temperature_gives_uniform_shares() {
    let (net, agents) = two_parallel_links();
    let s = Smoothing::new(CostFamily::SteepPower, 0.2, 1.0).unwrap();
    let e = entropy_solve(&net, &agents, 1e6, s, &EntropyOptions::default()).unwrap();
    let n = e.shares.len() as f64;
    assert!(e.shares.iter().all(|v| (v - 1.0 / n).abs() < 1e-4), "{:?}", e.shares);
}

#[test]
fn entropy_objective_beats_random_shares() {
    let (net, agents) = desk_instances().remove(2);
    let s = Smoothing::new(CostFamily::SteepPower, 0.2, 1.0).unwrap();
    let e = entropy_solve(&net, &agents, 0.05, s, &EntropyOptions::default()).unwrap();
    assert!(e.kkt_residual <= 1e-6);
    let sm_obj = |shares: &[f64]| {
        let mut st = e.state.clone();
        for (p, x) in st.flows.iter_mut().enumerate() {
            *x = shares[p] * e.mass;
        }
        let psi = potential_value(&st, &net, &agents).unwrap();
        psi / e.mass + e.eta * shares.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    };
    assert!((sm_obj(&e.shares) - e.objective).abs() < 1e-9);
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..200 {
        let w: Vec<f64> = (0..e.shares.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = w.iter().sum();
        let shares: Vec<f64> = w.iter().map(|v| v / z).collect();
        assert!(sm_obj(&shares) >= e.objective - 1e-12);
    }
}

#[test]
fn logit_objective_is_nonincreasing() {
    let (net, agents) = desk_instances().remove(2);
    let s = Smoothing::new(CostFamily::SteepPower, 0.2, 1.0).unwrap();
    let l = logit_dynamics(&net, &agents, 0.1, s, &LogitOptions { steps: 3000, record_every: 1, seed: Some(11), ..LogitOptions::default() }).unwrap();
    for w in l.trajectory.windows(2) {
        assert!(w[1].objective <= w[0].objective + 1e-12, "{w:?}");
    }
}
