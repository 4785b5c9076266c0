//! Tariff-design instruments: shipment floors with subsidies, per-commodity
//! capacity quotas, and capacity investment accounting.

use crate::agents::AgentSpec;
use crate::capacitated::{solve_capacitated, solve_routed, CapacitatedSolution, Floor, Quotas};
use crate::equilibrium::SolverSettings;
use crate::error::SolveError;
use crate::network::{enumerate_routes, expand_graph, route_cost, ArcKind, Capacity, Network, Resource, Route, Surcharges, SINK, SOURCE};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Solves the capacitated equilibrium with minimum shipments. Subsidies are
/// the floor multipliers: zero on slack floors, minimal norm otherwise.
pub fn solve_with_floors(net: &Network, agents: &AgentSpec, floors: &[Floor], settings: &SolverSettings) -> Result<CapacitatedSolution, SolveError> {
    if floors.iter().all(|f| f.minimum == 0.0) {
        return solve_routed(net, agents, floors, None, &[], settings);
    }
    agents.validate(net)?;
    check_floor_feasibility(net, agents, floors)?;
    let seeds = floor_routes(net, floors)?;
    match solve_routed(net, agents, floors, None, &seeds, settings) {
        Err(SolveError::NonConvergence { residual, .. }) => Err(SolveError::InfeasibleFloors(format!(
            "no capacity-feasible shipment plan found for the floors (solver residual {residual:.3e})"
        ))),
        other => other,
    }
}

/// Capacity graph of stations and links; `None` capacity is unlimited.
struct FlowGraph {
    n: usize,
    tail: Vec<usize>,
    head: Vec<usize>,
    cap: Vec<f64>,
    resource: Vec<Option<Resource>>,
}

impl FlowGraph {
    fn from_network(net: &Network, residual: &[(Resource, f64)]) -> Result<(Self, crate::network::ExpandedGraph), SolveError> {
        let g = expand_graph(net)?;
        let mut fg = FlowGraph { n: g.n_vertices, tail: vec![], head: vec![], cap: vec![], resource: vec![] };
        for (a, arc) in g.arcs.iter().enumerate() {
            if matches!(arc.kind, ArcKind::Closing) {
                continue;
            }
            let res = g.resource_of(a);
            let cap = match res.and_then(|r| residual.iter().find(|(x, _)| *x == r)) {
                Some((_, c)) => *c,
                None => match arc.capacity {
                    Capacity::Finite(c) => c,
                    Capacity::Unlimited => f64::INFINITY,
                },
            };
            fg.tail.push(arc.tail);
            fg.head.push(arc.head);
            fg.cap.push(cap);
            fg.resource.push(res);
        }
        Ok((fg, g))
    }

    fn set_cap(&mut self, g: &crate::network::ExpandedGraph, kind: ArcKind, cap: f64) {
        let a = g.arcs.iter().position(|x| x.kind == kind).unwrap();
        // Closing arc is dropped, so indices before it are unchanged.
        self.cap[a] = cap;
    }

    /// Edmonds–Karp max flow from SOURCE to SINK. Returns (value, arc flows, source side of a min cut).
    fn max_flow(&self) -> (f64, Vec<f64>, Vec<bool>) {
        let m = self.tail.len();
        let mut flow = vec![0.0; m];
        let mut adj = vec![Vec::new(); self.n];
        for a in 0..m {
            adj[self.tail[a]].push((a, true));
            adj[self.head[a]].push((a, false));
        }
        let eps = 1e-12;
        let residual = |flow: &[f64], a: usize, fwd: bool| if fwd { self.cap[a] - flow[a] } else { flow[a] };
        let mut total = 0.0;
        loop {
            let mut pred: Vec<Option<(usize, bool)>> = vec![None; self.n];
            let mut seen = vec![false; self.n];
            seen[SOURCE] = true;
            let mut queue = VecDeque::from([SOURCE]);
            while let Some(u) = queue.pop_front() {
                for &(a, fwd) in &adj[u] {
                    let v = if fwd { self.head[a] } else { self.tail[a] };
                    if !seen[v] && residual(&flow, a, fwd) > eps {
                        seen[v] = true;
                        pred[v] = Some((a, fwd));
                        queue.push_back(v);
                    }
                }
            }
            if !seen[SINK] {
                return (total, flow, seen);
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = SINK;
            while let Some((a, fwd)) = pred[v] {
                bottleneck = bottleneck.min(residual(&flow, a, fwd));
                v = if fwd { self.tail[a] } else { self.head[a] };
            }
            if !bottleneck.is_finite() {
                return (f64::INFINITY, flow, seen);
            }
            let mut v = SINK;
            while let Some((a, fwd)) = pred[v] {
                if fwd {
                    flow[a] += bottleneck;
                } else {
                    flow[a] -= bottleneck;
                }
                v = if fwd { self.tail[a] } else { self.head[a] };
            }
            total += bottleneck;
        }
    }

    fn cut_resources(&self, source_side: &[bool]) -> Vec<Resource> {
        (0..self.tail.len())
            .filter(|&a| source_side[self.tail[a]] && !source_side[self.head[a]])
            .filter_map(|a| self.resource[a])
            .collect()
    }
}

fn describe(net: &Network, r: Resource) -> String {
    match r {
        Resource::Link(l) => {
            let link = &net.links()[l];
            format!("link {}->{}", net.stations()[link.from].name, net.stations()[link.to].name)
        }
        Resource::Station(s) => format!("station {}", net.stations()[s].name),
    }
}

/// Necessary conditions for floor feasibility: agent caps, and a max-flow
/// check per producer-consumer pair and for all floors together. The error
/// names the capacities of a minimum cut.
pub fn check_floor_feasibility(net: &Network, agents: &AgentSpec, floors: &[Floor]) -> Result<(), SolveError> {
    let tol = 1e-9;
    let n_comm = net.n_commodities();
    for j in 0..net.producers().len() {
        for k in 0..n_comm {
            let need: f64 = floors.iter().filter(|f| f.producer == j && f.commodity == k).map(|f| f.minimum).sum();
            if let Some(g) = agents.cost(j, k) {
                if need > g.cap * (1.0 + tol) {
                    return Err(SolveError::InfeasibleFloors(format!(
                        "floors from {} total {need} above its capacity {}",
                        net.producers()[j].name,
                        g.cap
                    )));
                }
            }
        }
    }
    for i in 0..net.consumers().len() {
        for k in 0..n_comm {
            let need: f64 = floors.iter().filter(|f| f.consumer == i && f.commodity == k).map(|f| f.minimum).sum();
            if let Some(c) = agents.revenue(i, k) {
                if need > c.cap * (1.0 + tol) {
                    return Err(SolveError::InfeasibleFloors(format!(
                        "floors to {} total {need} above its saturation {}",
                        net.consumers()[i].name,
                        c.cap
                    )));
                }
            }
        }
    }

    let check = |pairs: &[(usize, usize, f64)], what: &str| -> Result<(), SolveError> {
        let (mut fg, g) = FlowGraph::from_network(net, &[])?;
        for j in 0..net.producers().len() {
            let need: f64 = pairs.iter().filter(|p| p.0 == j).map(|p| p.2).sum();
            fg.set_cap(&g, ArcKind::Supply(j), need);
        }
        for i in 0..net.consumers().len() {
            let need: f64 = pairs.iter().filter(|p| p.1 == i).map(|p| p.2).sum();
            fg.set_cap(&g, ArcKind::Demand(i), need);
        }
        let need: f64 = pairs.iter().map(|p| p.2).sum();
        let (value, _, side) = fg.max_flow();
        if value < need * (1.0 - tol) - tol {
            let cut: Vec<String> = fg.cut_resources(&side).into_iter().map(|r| describe(net, r)).collect();
            return Err(SolveError::InfeasibleFloors(format!(
                "{what}: floors need {need} but at most {value} fits; binding cut: {}",
                if cut.is_empty() { "none (unreachable)".to_string() } else { cut.join(", ") }
            )));
        }
        Ok(())
    };
    let pairs = pair_totals(floors);
    for &(j, i, v) in &pairs {
        check(&[(j, i, v)], &format!("{} -> {}", net.producers()[j].name, net.consumers()[i].name))?;
    }
    check(&pairs, "all floors together")
}

fn pair_totals(floors: &[Floor]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for f in floors.iter().filter(|f| f.minimum > 0.0) {
        match pairs.iter_mut().find(|p| p.0 == f.producer && p.1 == f.consumer) {
            Some(p) => p.2 += f.minimum,
            None => pairs.push((f.producer, f.consumer, f.minimum)),
        }
    }
    pairs
}

/// Initial routes that carry the floors within capacity: greedy per-pair max
/// flows on residual capacities, decomposed into paths. Pairs the greedy
/// plan cannot place fall back to all simple routes.
fn floor_routes(net: &Network, floors: &[Floor]) -> Result<Vec<Route>, SolveError> {
    let mut residual: Vec<(Resource, f64)> =
        net.capacitated_resources().into_iter().map(|r| (r, net.capacity(r).finite().unwrap())).collect();
    let mut routes: Vec<Route> = Vec::new();
    for (j, i, v) in pair_totals(floors) {
        let (mut fg, g) = FlowGraph::from_network(net, &residual)?;
        for jj in 0..net.producers().len() {
            fg.set_cap(&g, ArcKind::Supply(jj), if jj == j { v } else { 0.0 });
        }
        for ii in 0..net.consumers().len() {
            fg.set_cap(&g, ArcKind::Demand(ii), if ii == i { v } else { 0.0 });
        }
        let (value, mut flow, _) = fg.max_flow();
        if value < v * (1.0 - 1e-9) {
            for r in enumerate_routes(net, j, i)? {
                if !routes.contains(&r) {
                    routes.push(r);
                }
            }
            continue;
        }
        // Path decomposition.
        loop {
            let mut v_at = SOURCE;
            let mut arcs = Vec::new();
            let mut visited = vec![false; fg.n];
            while v_at != SINK {
                visited[v_at] = true;
                let Some(a) = (0..fg.tail.len()).find(|&a| fg.tail[a] == v_at && flow[a] > 1e-12 && !visited[fg.head[a]]) else { break };
                arcs.push(a);
                v_at = fg.head[a];
            }
            if v_at != SINK {
                break;
            }
            let amount = arcs.iter().map(|&a| flow[a]).fold(f64::INFINITY, f64::min);
            let mut links = Vec::new();
            for &a in &arcs {
                flow[a] -= amount;
                match fg.resource[a] {
                    Some(Resource::Link(l)) => links.push(l),
                    Some(r @ Resource::Station(_)) => {
                        if let Some(e) = residual.iter_mut().find(|(x, _)| *x == r) {
                            e.1 -= amount;
                        }
                    }
                    None => {}
                }
            }
            for &l in &links {
                if let Some(e) = residual.iter_mut().find(|(x, _)| *x == Resource::Link(l)) {
                    e.1 -= amount;
                }
            }
            let route = Route::new(net, j, i, links)?;
            if !routes.contains(&route) {
                routes.push(route);
            }
        }
    }
    Ok(routes)
}

/// Delivered tariff of one commodity over one route: origin price plus base
/// cost plus that commodity's surcharges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredTariff {
    pub producer: usize,
    pub consumer: usize,
    pub commodity: usize,
    pub route: usize,
    pub freight: f64,
    pub delivered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaTariffs {
    pub quotas: Quotas,
    /// Surcharges per commodity from the quota problem.
    pub surcharges: Vec<Surcharges>,
    pub schedule: Vec<DeliveredTariff>,
    pub solution: CapacitatedSolution,
    /// Largest |quota-problem flow − reference flow| over (i,j,k).
    pub max_flow_deviation: f64,
}

/// Quotas from the per-commodity loads of the floor-constrained equilibrium,
/// then the quota problem without floors.
pub fn quota_tariffs(net: &Network, agents: &AgentSpec, floors: &[Floor], settings: &SolverSettings) -> Result<QuotaTariffs, SolveError> {
    let reference = solve_with_floors(net, agents, floors, settings)?;
    let resources = net.capacitated_resources();
    let caps: Vec<Vec<f64>> = resources.iter().map(|&r| reference.loads_by_commodity(r)).collect();
    let quotas = Quotas { resources, caps };
    let mut out = solve_quotas(net, agents, &quotas, &reference.routes, settings)?;
    out.max_flow_deviation = max_deviation(&out.solution, &reference);
    Ok(out)
}

/// Quota problem for directly given allotments.
pub fn quota_tariffs_with(net: &Network, agents: &AgentSpec, quotas: &Quotas, settings: &SolverSettings) -> Result<QuotaTariffs, SolveError> {
    for (r, caps) in quotas.resources.iter().zip(&quotas.caps) {
        let total: f64 = caps.iter().sum();
        match net.capacity(*r) {
            Capacity::Finite(c) if total > c * (1.0 + 1e-9) => {
                return Err(SolveError::Input(format!("quotas on {} total {total}, capacity {c}", describe(net, *r))))
            }
            _ => {}
        }
    }
    solve_quotas(net, agents, quotas, &[], settings)
}

fn solve_quotas(net: &Network, agents: &AgentSpec, quotas: &Quotas, seeds: &[Route], settings: &SolverSettings) -> Result<QuotaTariffs, SolveError> {
    let solution = solve_routed(net, agents, &[], Some(quotas), seeds, settings)?;
    let eq = &solution.equilibrium;
    let mut schedule = Vec::new();
    for (ri, route) in solution.routes.iter().enumerate() {
        for k in 0..net.n_commodities() {
            if agents.cost(route.producer, k).is_none() || agents.revenue(route.consumer, k).is_none() {
                continue;
            }
            let freight = route_cost(net, route, &solution.surcharges[k])?;
            schedule.push(DeliveredTariff {
                producer: route.producer,
                consumer: route.consumer,
                commodity: k,
                route: ri,
                freight,
                delivered: eq.producer_prices[route.producer][k] + freight,
            });
        }
    }
    Ok(QuotaTariffs {
        quotas: quotas.clone(),
        surcharges: solution.surcharges.clone(),
        schedule,
        solution,
        max_flow_deviation: 0.0,
    })
}

fn max_deviation(a: &CapacitatedSolution, b: &CapacitatedSolution) -> f64 {
    a.equilibrium
        .flows
        .iter()
        .flatten()
        .flatten()
        .zip(b.equilibrium.flows.iter().flatten().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub resource: Resource,
    pub delta: f64,
    pub shadow_value: f64,
    pub primal_change: f64,
    /// Shadow value × delta.
    pub first_order: f64,
    pub intermediary_change: f64,
    pub agent_profit_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestmentReport {
    pub primal_value: f64,
    /// Σ base route cost × flow.
    pub base_revenue: f64,
    pub consumer_profit: f64,
    pub producer_profit: f64,
    /// Σ surcharge × capacity over capacitated resources.
    pub intermediary_profit: f64,
    /// Σ over flows of the surcharges along their routes.
    pub surcharge_revenue: f64,
    /// |primal − (consumer + producer + intermediary profit)| / (1 + |primal|).
    pub identity_residual: f64,
    /// |intermediary profit − surcharge revenue| / (1 + |intermediary profit|).
    pub rent_residual: f64,
    pub shadow_values: Vec<(Resource, f64)>,
    pub sensitivities: Vec<Sensitivity>,
}

struct Accounts {
    primal: f64,
    consumer: f64,
    producer: f64,
    intermediary: f64,
}

fn accounts(sol: &CapacitatedSolution, net: &Network, agents: &AgentSpec) -> Accounts {
    let eq = &sol.equilibrium;
    Accounts {
        primal: eq.primal_value,
        consumer: (0..eq.consumer_prices.len()).map(|i| agents.consumer_profit(i, &eq.consumer_prices[i])).sum(),
        producer: (0..eq.producer_prices.len()).map(|j| agents.producer_profit(j, &eq.producer_prices[j])).sum(),
        intermediary: sol.intermediary_profit(net),
    }
}

/// Revenue decomposition at the capacitated equilibrium and re-solves for
/// each requested capacity change.
pub fn investment_report(
    net: &Network,
    agents: &AgentSpec,
    deltas: &[(Resource, f64)],
    settings: &SolverSettings,
) -> Result<InvestmentReport, SolveError> {
    let sol = solve_capacitated(net, agents, settings)?;
    let base = accounts(&sol, net, agents);
    let surcharge_revenue = sol.surcharge_revenue();
    let mut sensitivities = Vec::new();
    for &(r, delta) in deltas {
        let cap = net.capacity(r).finite().ok_or_else(|| SolveError::Input(format!("{} has no finite capacity", describe(net, r))))?;
        let changed = net.with_capacity(r, Capacity::Finite(cap + delta))?;
        let s2 = solve_capacitated(&changed, agents, settings)?;
        let a2 = accounts(&s2, &changed, agents);
        let shadow = sol.surcharges[0].get(r);
        sensitivities.push(Sensitivity {
            resource: r,
            delta,
            shadow_value: shadow,
            primal_change: a2.primal - base.primal,
            first_order: shadow * delta,
            intermediary_change: a2.intermediary - base.intermediary,
            agent_profit_change: (a2.consumer + a2.producer) - (base.consumer + base.producer),
        });
    }
    Ok(InvestmentReport {
        primal_value: base.primal,
        base_revenue: sol.base_revenue(net),
        consumer_profit: base.consumer,
        producer_profit: base.producer,
        intermediary_profit: base.intermediary,
        surcharge_revenue,
        identity_residual: (base.primal - base.consumer - base.producer - base.intermediary).abs() / (1.0 + base.primal.abs()),
        rent_residual: (base.intermediary - surcharge_revenue).abs() / (1.0 + base.intermediary.abs()),
        shadow_values: net.capacitated_resources().into_iter().map(|r| (r, sol.surcharges[0].get(r))).collect(),
        sensitivities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{QuadraticConsumer, QuadraticProducer};
    use crate::network::NetworkBuilder;

    fn q1(cap: Capacity) -> (Network, AgentSpec) {
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

    fn floor(v: f64) -> Floor {
        Floor { consumer: 0, producer: 0, commodity: 0, minimum: v }
    }

    #[test]
    fn binding_floor_is_subsidised() {
        let (net, agents) = q1(Capacity::Unlimited);
        let sol = solve_with_floors(&net, &agents, &[floor(5.0)], &SolverSettings::default()).unwrap();
        assert!((sol.equilibrium.total_flow() - 5.0).abs() < 1e-8);
        assert!((sol.floors[0].subsidy - 4.0).abs() < 1e-8, "{:?}", sol.floors);
        assert!(sol.equilibrium.passes(1e-6), "{:?}", sol.equilibrium.residuals);
    }

    #[test]
    fn floor_at_competitive_flow_needs_no_subsidy() {
        let (net, agents) = q1(Capacity::Unlimited);
        let sol = solve_with_floors(&net, &agents, &[floor(4.0)], &SolverSettings::default()).unwrap();
        assert!((sol.equilibrium.total_flow() - 4.0).abs() < 1e-8);
        assert!(sol.floors[0].subsidy.abs() < 1e-8);
    }

    #[test]
    fn floor_above_capacity_names_the_cut() {
        let (net, agents) = q1(Capacity::Finite(3.0));
        let err = solve_with_floors(&net, &agents, &[floor(5.0)], &SolverSettings::default()).unwrap_err();
        match err {
            SolveError::InfeasibleFloors(msg) => assert!(msg.contains("link S->T"), "{msg}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn single_commodity_quota_matches_capacitated() {
        let (net, agents) = q1(Capacity::Finite(2.0));
        let q = quota_tariffs(&net, &agents, &[], &SolverSettings::default()).unwrap();
        assert!((q.surcharges[0].links[0] - 8.0).abs() < 1e-8);
        assert!(q.max_flow_deviation < 1e-8);
    }

    #[test]
    fn investment_accounts_balance() {
        let (net, agents) = q1(Capacity::Finite(2.0));
        let r = investment_report(&net, &agents, &[(Resource::Link(0), 2.0)], &SolverSettings::default()).unwrap();
        assert!((r.intermediary_profit - 16.0).abs() < 1e-7);
        assert!((r.surcharge_revenue - 16.0).abs() < 1e-7);
        assert!(r.identity_residual < 1e-9);
        let s = &r.sensitivities[0];
        assert!(s.primal_change > 0.0);
        assert!((s.intermediary_change + 16.0).abs() < 1e-6);
    }

    fn two_commodities() -> (Network, AgentSpec) {
        let mut b = NetworkBuilder::new();
        let s = b.station("S", 0.0, Capacity::Unlimited);
        let t = b.station("T", 0.0, Capacity::Unlimited);
        b.link(s, t, 2.0, Capacity::Finite(4.0));
        b.producer("P", s);
        b.consumer("C", t);
        b.commodity("coal");
        b.commodity("grain");
        let net = b.build().unwrap();
        let c = |b: f64| Some(QuadraticConsumer::new(b, -1.0, b / 2.0).unwrap());
        let p = Some(QuadraticProducer::new(2.0, 1.0, 10.0).unwrap());
        let agents = AgentSpec::new(&net, vec![vec![c(30.0), c(10.0)]], vec![vec![p, p]]).unwrap();
        (net, agents)
    }

    #[test]
    fn low_value_floor_is_cross_subsidised() {
        let (net, agents) = two_commodities();
        let settings = SolverSettings::default();
        let floors = [Floor { consumer: 0, producer: 0, commodity: 1, minimum: 1.0 }];
        let sol = solve_with_floors(&net, &agents, &floors, &settings).unwrap();
        assert!((sol.link_surcharge(0) - 14.0).abs() < 1e-7);
        assert!((sol.floors[0].subsidy - 12.0).abs() < 1e-7);
        let q = quota_tariffs(&net, &agents, &floors, &settings).unwrap();
        assert!((q.surcharges[0].links[0] - 14.0).abs() < 1e-7, "{:?}", q.surcharges);
        assert!((q.surcharges[1].links[0] - 2.0).abs() < 1e-7, "{:?}", q.surcharges);
        assert!(q.max_flow_deviation < 1e-6);
        assert!(q.solution.equilibrium.passes(1e-6), "{:?}", q.solution.equilibrium.residuals);
    }

    #[test]
    fn zero_quota_shuts_a_commodity_out() {
        let (net, agents) = two_commodities();
        let q = quota_tariffs(&net, &agents, &[], &SolverSettings::default()).unwrap();
        assert_eq!(q.quotas.caps[0].len(), 2);
        assert!(q.quotas.caps[0][1].abs() < 1e-9);
        assert!(q.max_flow_deviation < 1e-6);
        assert!((q.surcharges[0].links[0] - 10.0).abs() < 1e-7);
        // Smallest surcharge keeping the shut-out commodity off the link: 10 = 2 + 2 + t.
        assert!((q.surcharges[1].links[0] - 6.0).abs() < 1e-7, "{:?}", q.surcharges);
    }
}
