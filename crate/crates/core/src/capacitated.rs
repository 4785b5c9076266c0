//! Equilibrium under link and station capacities, with shadow surcharges and
//! route generation.

use crate::agents::AgentSpec;
use crate::equilibrium::{agent_and_balance_residuals, profit_sum, ConditionResiduals, EquilibriumSolution, SolverSettings};
use crate::error::SolveError;
use crate::network::{enumerate_routes, min_cost_route, route_cost, Network, Resource, Route, Surcharges};
use crate::transport::{Column, FloorRow, Master};
use serde::{Deserialize, Serialize};

/// Minimum shipment of one commodity from a producer to a consumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub consumer: usize,
    pub producer: usize,
    pub commodity: usize,
    pub minimum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorOutcome {
    pub floor: Floor,
    pub flow: f64,
    pub subsidy: f64,
}

/// Per-commodity capacity allotments of the capacitated resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quotas {
    pub resources: Vec<Resource>,
    /// `caps[r][k]`: allotment of `resources[r]` to commodity `k`.
    pub caps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitatedSolution {
    pub equilibrium: EquilibriumSolution,
    pub routes: Vec<Route>,
    /// `route_flows[r][k]`.
    pub route_flows: Vec<Vec<f64>>,
    /// Surcharges seen by each commodity; identical across commodities
    /// unless capacity is split by quotas.
    pub surcharges: Vec<Surcharges>,
    pub floors: Vec<FloorOutcome>,
    pub quotas: Option<Quotas>,
    pub generation_rounds: usize,
}

impl CapacitatedSolution {
    pub fn link_surcharge(&self, l: usize) -> f64 {
        self.surcharges[0].links[l]
    }

    pub fn station_surcharge(&self, s: usize) -> f64 {
        self.surcharges[0].stations[s]
    }

    /// Σ over routes and commodities of route flow for `r`.
    pub fn load(&self, r: Resource) -> f64 {
        self.loads_by_commodity(r).iter().sum()
    }

    pub fn loads_by_commodity(&self, r: Resource) -> Vec<f64> {
        let k = self.surcharges.len();
        let mut out = vec![0.0; k];
        for (route, flows) in self.routes.iter().zip(&self.route_flows) {
            if route.resources().any(|x| x == r) {
                for (o, f) in out.iter_mut().zip(flows) {
                    *o += f;
                }
            }
        }
        out
    }

    /// Capacity rent: Σ surcharge × capacity over capacitated resources.
    pub fn intermediary_profit(&self, net: &Network) -> f64 {
        let mut total = 0.0;
        match &self.quotas {
            None => {
                for r in net.capacitated_resources() {
                    total += self.surcharges[0].get(r) * net.capacity(r).finite().unwrap();
                }
            }
            Some(q) => {
                for (r, caps) in q.resources.iter().zip(&q.caps) {
                    for (k, cap) in caps.iter().enumerate() {
                        total += self.surcharges[k].get(*r) * cap;
                    }
                }
            }
        }
        total
    }

    /// Σ over flows of the surcharges collected along their routes.
    pub fn surcharge_revenue(&self) -> f64 {
        let mut total = 0.0;
        for (route, flows) in self.routes.iter().zip(&self.route_flows) {
            for (k, f) in flows.iter().enumerate() {
                let s: f64 = route.resources().map(|r| self.surcharges[k].get(r)).sum();
                total += s * f;
            }
        }
        total
    }

    /// Σ base tariff × flow.
    pub fn base_revenue(&self, net: &Network) -> f64 {
        let zero = Surcharges::zero(net);
        self.routes
            .iter()
            .zip(&self.route_flows)
            .map(|(r, f)| route_cost(net, r, &zero).unwrap() * f.iter().sum::<f64>())
            .sum()
    }
}

pub fn solve_capacitated(net: &Network, agents: &AgentSpec, settings: &SolverSettings) -> Result<CapacitatedSolution, SolveError> {
    solve_routed(net, agents, &[], None, &[], settings)
}

struct RowKey {
    resource: Resource,
    commodity: Option<usize>,
}

/// Route generation around the restricted master problem. Capacity rows are
/// aggregate, or per commodity when `quotas` is given.
pub(crate) fn solve_routed(
    net: &Network,
    agents: &AgentSpec,
    floors: &[Floor],
    quotas: Option<&Quotas>,
    seed_routes: &[Route],
    settings: &SolverSettings,
) -> Result<CapacitatedSolution, SolveError> {
    agents.validate(net)?;
    let n_comm = net.n_commodities();
    let (n_cons, n_prod) = (net.consumers().len(), net.producers().len());
    for f in floors {
        if f.consumer >= n_cons || f.producer >= n_prod || f.commodity >= n_comm || !(f.minimum >= 0.0 && f.minimum.is_finite()) {
            return Err(SolveError::Input(format!("invalid floor {f:?}")));
        }
        if agents.revenue(f.consumer, f.commodity).is_none() || agents.cost(f.producer, f.commodity).is_none() {
            return Err(SolveError::Input(format!("floor {f:?} names an agent that does not trade the commodity")));
        }
    }

    let mut rows: Vec<RowKey> = Vec::new();
    let mut caps: Vec<f64> = Vec::new();
    match quotas {
        None => {
            for r in net.capacitated_resources() {
                rows.push(RowKey { resource: r, commodity: None });
                caps.push(net.capacity(r).finite().unwrap());
            }
        }
        Some(q) => {
            for (r, cs) in q.resources.iter().zip(&q.caps) {
                if cs.len() != n_comm || cs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(SolveError::Input(format!("bad quota entry for {r:?}")));
                }
                for (k, c) in cs.iter().enumerate() {
                    rows.push(RowKey { resource: *r, commodity: Some(k) });
                    caps.push(*c);
                }
            }
        }
    }
    let row_of = |res: Resource, k: usize| -> Option<usize> {
        rows.iter().position(|rk| rk.resource == res && rk.commodity.map_or(true, |c| c == k))
    };

    let trades = |j: usize, i: usize, k: usize| agents.revenue(i, k).is_some() && agents.cost(j, k).is_some();
    let zero = Surcharges::zero(net);
    let mut routes: Vec<Route> = Vec::new();
    let add_route = |routes: &mut Vec<Route>, r: Route| {
        if !routes.contains(&r) {
            routes.push(r);
            true
        } else {
            false
        }
    };
    for j in 0..n_prod {
        for i in 0..n_cons {
            if !(0..n_comm).any(|k| trades(j, i, k)) {
                continue;
            }
            if let Ok(r) = min_cost_route(net, j, i, &zero) {
                add_route(&mut routes, r);
            }
        }
    }
    for r in seed_routes {
        add_route(&mut routes, r.clone());
    }
    for f in floors {
        if f.minimum > 0.0 && !routes.iter().any(|r| r.producer == f.producer && r.consumer == f.consumer) {
            return Err(SolveError::InfeasibleFloors(format!(
                "no route from {} to {}",
                net.producers()[f.producer].name,
                net.consumers()[f.consumer].name
            )));
        }
    }

    let floor_rows: Vec<FloorRow> = floors
        .iter()
        .map(|f| FloorRow { minimum: f.minimum })
        .collect();
    let floor_of = |i: usize, j: usize, k: usize| floors.iter().position(|f| f.consumer == i && f.producer == j && f.commodity == k);

    let max_rounds = settings.max_iterations.clamp(1, 200);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut columns = Vec::new();
        let mut col_index = Vec::new();
        for (ri, route) in routes.iter().enumerate() {
            let base = route_cost(net, route, &zero)?;
            for k in 0..n_comm {
                if !trades(route.producer, route.consumer, k) {
                    continue;
                }
                let col_rows: Vec<usize> = route.resources().filter_map(|res| row_of(res, k)).collect();
                columns.push(Column {
                    consumer: route.consumer,
                    producer: route.producer,
                    commodity: k,
                    cost: base,
                    rows: col_rows,
                    floor: floor_of(route.consumer, route.producer, k),
                });
                col_index.push((ri, k));
            }
        }
        let master = Master { agents, columns, capacities: caps.clone(), floors: floor_rows.clone() };
        let ms = master.solve(&settings.qp())?;

        let mut surcharges = vec![Surcharges::zero(net); n_comm];
        for (row, key) in rows.iter().enumerate() {
            match key.commodity {
                None => surcharges.iter_mut().for_each(|s| s.set(key.resource, ms.row_prices[row])),
                Some(k) => surcharges[k].set(key.resource, ms.row_prices[row]),
            }
        }

        // Price out cheaper routes at the current surcharges.
        let price_tol = 1e-9 * (1.0 + ms.consumer_prices.iter().flatten().fold(0.0f64, |m, p| m.max(*p)));
        let mut added = false;
        for j in 0..n_prod {
            for i in 0..n_cons {
                for k in 0..n_comm {
                    if !trades(j, i, k) {
                        continue;
                    }
                    let Ok(best) = min_cost_route(net, j, i, &surcharges[k]) else { continue };
                    let gamma = floor_of(i, j, k).map_or(0.0, |f| ms.floor_prices[f]);
                    let reduced = ms.consumer_prices[i][k] + gamma - ms.producer_prices[j][k] - route_cost(net, &best, &surcharges[k])?;
                    if reduced > price_tol && add_route(&mut routes, best) {
                        added = true;
                    }
                }
            }
        }
        if added && rounds < max_rounds {
            continue;
        }

        let mut route_flows = vec![vec![0.0; n_comm]; routes.len()];
        let mut flows = vec![vec![vec![0.0; n_comm]; n_prod]; n_cons];
        for (&(ri, k), &x) in col_index.iter().zip(&ms.column_flows) {
            route_flows[ri][k] += x;
            let r = &routes[ri];
            flows[r.consumer][r.producer][k] += x;
        }
        let floor_outcomes: Vec<FloorOutcome> = floors
            .iter()
            .zip(&ms.floor_prices)
            .map(|(f, &g)| FloorOutcome { floor: *f, flow: flows[f.consumer][f.producer][f.commodity], subsidy: g })
            .collect();
        let rent: f64 = ms.row_prices.iter().zip(&caps).map(|(t, c)| t * c).sum();
        let floor_cost: f64 = floor_outcomes.iter().map(|f| f.subsidy * f.floor.minimum).sum();
        let dual_value = profit_sum(agents, &ms.consumer_prices, &ms.producer_prices) + rent - floor_cost;
        let equilibrium = EquilibriumSolution {
            flows,
            consumption: ms.consumption,
            production: ms.production,
            consumer_prices: ms.consumer_prices,
            producer_prices: ms.producer_prices,
            primal_value: ms.primal_value,
            dual_value,
            gap: dual_value - ms.primal_value,
            residuals: ConditionResiduals::default(),
        };
        let mut sol = CapacitatedSolution {
            equilibrium,
            routes,
            route_flows,
            surcharges,
            floors: floor_outcomes,
            quotas: quotas.cloned(),
            generation_rounds: rounds,
        };
        sol.equilibrium.residuals = equilibrium_report(&sol, net, agents);
        return Ok(sol);
    }
}

/// Residuals of conditions 1–7 plus floor conditions when present.
pub fn equilibrium_report(sol: &CapacitatedSolution, net: &Network, agents: &AgentSpec) -> ConditionResiduals {
    let eq = &sol.equilibrium;
    let mut r = agent_and_balance_residuals(eq, agents);
    let n_comm = net.n_commodities();
    let subsidy = |i: usize, j: usize, k: usize| {
        sol.floors
            .iter()
            .find(|f| f.floor.consumer == i && f.floor.producer == j && f.floor.commodity == k)
            .map_or(0.0, |f| f.subsidy)
    };

    // Flow-carrying routes: delivered price equals origin price plus route cost.
    for (route, flows) in sol.routes.iter().zip(&sol.route_flows) {
        for (k, &x) in flows.iter().enumerate() {
            let (i, j) = (route.consumer, route.producer);
            let cost = route_cost(net, route, &sol.surcharges[k]).unwrap_or(f64::INFINITY);
            let wedge = eq.producer_prices[j][k] + cost - eq.consumer_prices[i][k] - subsidy(i, j, k);
            r.arbitrage = r.arbitrage.max((-wedge).max(0.0)).max((x * wedge).abs()).max(-x);
        }
    }
    // Every trading pair: no cheaper delivery than the local price gap.
    for i in 0..net.consumers().len() {
        for j in 0..net.producers().len() {
            for k in 0..n_comm {
                if agents.revenue(i, k).is_none() || agents.cost(j, k).is_none() {
                    continue;
                }
                if let Ok(best) = min_cost_route(net, j, i, &sol.surcharges[k]) {
                    let cost = route_cost(net, &best, &sol.surcharges[k]).unwrap();
                    let wedge = eq.producer_prices[j][k] + cost - eq.consumer_prices[i][k] - subsidy(i, j, k);
                    r.arbitrage = r.arbitrage.max((-wedge).max(0.0));
                }
            }
        }
    }

    // Capacity feasibility and slackness.
    let check = |cap: f64, load: f64, t: f64| (load - cap).max(0.0).max((t * (cap - load)).abs()).max(-t);
    let mut resource_residual = |res: Resource, v: f64| match res {
        Resource::Link(_) => r.link_capacity = r.link_capacity.max(v),
        Resource::Station(_) => r.station_capacity = r.station_capacity.max(v),
    };
    let all_resources = (0..net.links().len()).map(Resource::Link).chain((0..net.stations().len()).map(Resource::Station));
    match &sol.quotas {
        None => {
            for res in all_resources {
                let t = sol.surcharges[0].get(res);
                let load = sol.load(res);
                let v = match net.capacity(res).finite() {
                    Some(cap) => check(cap, load, t),
                    None => t.abs() * (1.0 + load),
                };
                resource_residual(res, v);
            }
        }
        Some(q) => {
            for res in all_resources {
                let loads = sol.loads_by_commodity(res);
                let entry = q.resources.iter().position(|x| *x == res);
                for k in 0..n_comm {
                    let t = sol.surcharges[k].get(res);
                    let v = match entry {
                        Some(e) => check(q.caps[e][k], loads[k], t),
                        None => t.abs() * (1.0 + loads[k]),
                    };
                    resource_residual(res, v);
                }
                if let (Some(e), Some(cap)) = (entry, net.capacity(res).finite()) {
                    let total: f64 = q.caps[e].iter().sum();
                    resource_residual(res, (total - cap).max(0.0));
                }
            }
        }
    }
    for f in &sol.floors {
        let v = (f.floor.minimum - f.flow).max(0.0).max((f.subsidy * (f.flow - f.floor.minimum)).abs()).max(-f.subsidy);
        r.floors = r.floors.max(v);
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteViolation {
    pub producer: usize,
    pub consumer: usize,
    pub commodity: usize,
    pub used: Route,
    pub cheaper: Route,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCertificate {
    pub checked_routes: usize,
    pub exhaustive: bool,
    pub violations: Vec<RouteViolation>,
}

impl RouteCertificate {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Largest station count for which alternatives are enumerated exhaustively.
pub const EXHAUSTIVE_STATION_LIMIT: usize = 12;

/// Checks that no flow-carrying route has a strictly cheaper alternative at
/// the solution's surcharged costs.
pub fn certify_routes(sol: &CapacitatedSolution, net: &Network) -> RouteCertificate {
    let exhaustive = net.stations().len() <= EXHAUSTIVE_STATION_LIMIT;
    let flow_tol = 1e-7 * (1.0 + sol.route_flows.iter().flatten().fold(0.0f64, |m, x| m.max(*x)));
    let mut violations = Vec::new();
    let mut checked = 0;
    for (route, flows) in sol.routes.iter().zip(&sol.route_flows) {
        for (k, &x) in flows.iter().enumerate() {
            if x <= flow_tol {
                continue;
            }
            checked += 1;
            let shadow = &sol.surcharges[k];
            let used = route_cost(net, route, shadow).unwrap_or(f64::INFINITY);
            let best = if exhaustive {
                enumerate_routes(net, route.producer, route.consumer).ok().and_then(|all| {
                    all.into_iter()
                        .map(|r| (route_cost(net, &r, shadow).unwrap(), r))
                        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                })
            } else {
                min_cost_route(net, route.producer, route.consumer, shadow).ok().map(|r| (route_cost(net, &r, shadow).unwrap(), r))
            };
            if let Some((cost, alt)) = best {
                let tol = 1e-7 * (1.0 + used.abs());
                if used - cost > tol {
                    violations.push(RouteViolation {
                        producer: route.producer,
                        consumer: route.consumer,
                        commodity: k,
                        used: route.clone(),
                        cheaper: alt,
                        margin: used - cost,
                    });
                }
            }
        }
    }
    RouteCertificate { checked_routes: checked, exhaustive, violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{QuadraticConsumer, QuadraticProducer};
    use crate::network::{Capacity, NetworkBuilder};

    fn q1_link(cap: Capacity) -> (Network, AgentSpec) {
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

    #[test]
    fn slack_capacity_gives_zero_surcharge() {
        let (net, agents) = q1_link(Capacity::Finite(6.0));
        let sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
        assert!((sol.equilibrium.total_flow() - 4.0).abs() < 1e-8);
        assert!(sol.link_surcharge(0).abs() < 1e-8);
    }

    #[test]
    fn binding_capacity_prices_the_wedge() {
        let (net, agents) = q1_link(Capacity::Finite(2.0));
        let sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
        assert!((sol.equilibrium.total_flow() - 2.0).abs() < 1e-8);
        assert!((sol.link_surcharge(0) - 8.0).abs() < 1e-9, "{}", sol.link_surcharge(0));
        assert!(sol.equilibrium.passes(1e-6), "{:?}", sol.equilibrium.residuals);
        assert!((sol.intermediary_profit(&net) - 16.0).abs() < 1e-6);
    }

    #[test]
    fn capacity_exactly_at_competitive_flow_is_degenerate_with_zero_surcharge() {
        let (net, agents) = q1_link(Capacity::Finite(4.0));
        let sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
        assert!((sol.equilibrium.total_flow() - 4.0).abs() < 1e-7);
        assert!(sol.link_surcharge(0).abs() < 1e-6);
    }

    #[test]
    fn injected_violations_are_measured() {
        let (net, agents) = q1_link(Capacity::Finite(2.0));
        let mut sol = solve_capacitated(&net, &agents, &SolverSettings::default()).unwrap();
        sol.surcharges[0].stations[0] = 1.0;
        let r = equilibrium_report(&sol, &net, &agents);
        assert!(r.station_capacity >= 1.0);
    }
}
