#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;
use railprice_core::{AgentSpec, Capacity, Network, NetworkBuilder, QuadraticConsumer, QuadraticProducer};

pub fn q1(cap: Capacity) -> (Network, AgentSpec) {
    let mut b = NetworkBuilder::new();
    let s = b.station("S", 0.0, Capacity::Unlimited);
    let t = b.station("T", 0.0, Capacity::Unlimited);
    b.link(s, t, 2.0, cap);
    b.producer("P", s);
    b.consumer("C", t);
    b.commodity("grain");
    let net = b.build().unwrap();
    let agents = AgentSpec::single(
        &net,
        QuadraticConsumer::new(20.0, -1.0, 10.0).unwrap(),
        QuadraticProducer::new(2.0, 1.0, 10.0).unwrap(),
    )
    .unwrap();
    (net, agents)
}

pub fn random_consumer(rng: &mut StdRng) -> QuadraticConsumer {
    let b = rng.gen_range(15.0..30.0);
    let a = -rng.gen_range(0.5..2.0);
    let peak = -b / (2.0 * a);
    QuadraticConsumer::new(b, a, peak * rng.gen_range(0.5..1.0)).unwrap()
}

pub fn random_producer(rng: &mut StdRng) -> QuadraticProducer {
    QuadraticProducer::new(rng.gen_range(1.0..4.0), rng.gen_range(0.5..2.0), rng.gen_range(5.0..15.0)).unwrap()
}

/// Random network with a guaranteed chain 0 → 1 → … → n−1, producers on the
/// first half and consumers on the second. `cap_prob` is the chance that a
/// link or station gets a finite capacity.
pub fn random_instance(rng: &mut StdRng, stations: usize, commodities: usize, cap_prob: f64) -> (Network, AgentSpec) {
    let mut b = NetworkBuilder::new();
    let cap = |rng: &mut StdRng| {
        if rng.gen_bool(cap_prob) {
            Capacity::Finite(rng.gen_range(0.5..6.0))
        } else {
            Capacity::Unlimited
        }
    };
    let ids: Vec<usize> = (0..stations)
        .map(|s| {
            let c = cap(rng);
            b.station(&format!("S{s}"), rng.gen_range(0.1..1.0), c)
        })
        .collect();
    for s in 0..stations - 1 {
        let c = cap(rng);
        b.link(ids[s], ids[s + 1], rng.gen_range(0.5..3.0), c);
    }
    for _ in 0..stations {
        let (u, v) = (rng.gen_range(0..stations), rng.gen_range(0..stations));
        if u != v {
            let c = cap(rng);
            b.link(ids[u], ids[v], rng.gen_range(0.5..3.0), c);
        }
    }
    let half = (stations / 2).max(1);
    let n_prod = rng.gen_range(1..=2);
    let n_cons = rng.gen_range(1..=2);
    for j in 0..n_prod {
        b.producer(&format!("P{j}"), ids[rng.gen_range(0..half)]);
    }
    for i in 0..n_cons {
        b.consumer(&format!("C{i}"), ids[rng.gen_range(half..stations)]);
    }
    for k in 0..commodities {
        b.commodity(&format!("K{k}"));
    }
    let net = b.build().unwrap();
    let consumers = (0..n_cons).map(|_| (0..commodities).map(|_| Some(random_consumer(rng))).collect()).collect();
    let producers = (0..n_prod).map(|_| (0..commodities).map(|_| Some(random_producer(rng))).collect()).collect();
    let agents = AgentSpec::new(&net, consumers, producers).unwrap();
    (net, agents)
}
