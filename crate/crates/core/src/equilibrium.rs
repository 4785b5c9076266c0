//! Competitive equilibrium with fixed delivery tariffs and no capacity limits.

use crate::agents::{AgentSpec, Cost, Revenue};
use crate::error::SolveError;
use crate::network::{min_cost_route, route_cost, Network, Surcharges};
use crate::qp::QpSettings;
use crate::transport::{Column, Master};
use serde::{Deserialize, Serialize};

/// Solver controls shared by the equilibrium, capacitated and policy solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative duality gap and residual threshold for a PASS.
    pub tolerance: f64,
    /// Budget shared by interior point iterations and route-generation rounds.
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tolerance: 1e-6, max_iterations: 100_000 }
    }
}

impl SolverSettings {
    pub(crate) fn qp(&self) -> QpSettings {
        QpSettings { tol: 1e-11, max_iter: self.max_iterations.clamp(1, 500) }
    }
}

/// Delivered-cost tariff per (consumer, producer, commodity); `None` means
/// the pair cannot trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariffs {
    n_cons: usize,
    n_prod: usize,
    n_comm: usize,
    values: Vec<Option<f64>>,
}

impl Tariffs {
    pub fn empty(net: &Network) -> Self {
        let (i, j, k) = (net.consumers().len(), net.producers().len(), net.n_commodities());
        Tariffs { n_cons: i, n_prod: j, n_comm: k, values: vec![None; i * j * k] }
    }

    pub fn uniform(net: &Network, c: f64) -> Self {
        let mut t = Self::empty(net);
        t.values.iter_mut().for_each(|v| *v = Some(c));
        t
    }

    /// Cheapest base route cost for every reachable pair.
    pub fn base(net: &Network) -> Self {
        let mut t = Self::empty(net);
        let zero = Surcharges::zero(net);
        for i in 0..t.n_cons {
            for j in 0..t.n_prod {
                if let Ok(r) = min_cost_route(net, j, i, &zero) {
                    let c = route_cost(net, &r, &zero).unwrap();
                    for k in 0..t.n_comm {
                        t.set(i, j, k, c);
                    }
                }
            }
        }
        t
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_prod + j) * self.n_comm + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        self.values[self.idx(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, c: f64) {
        let n = self.idx(i, j, k);
        self.values[n] = Some(c);
    }

    /// Same pattern with every tariff shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut t = self.clone();
        t.values.iter_mut().for_each(|v| *v = v.map(|c| c + delta));
        t
    }

    pub fn validate(&self, net: &Network) -> Result<(), SolveError> {
        if (self.n_cons, self.n_prod, self.n_comm) != (net.consumers().len(), net.producers().len(), net.n_commodities()) {
            return Err(SolveError::Input("tariff table does not match the network".into()));
        }
        if self.values.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SolveError::Input("tariffs must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Largest violation of each equilibrium condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionResiduals {
    pub consumer_optimality: f64,
    pub producer_optimality: f64,
    pub demand_balance: f64,
    pub supply_balance: f64,
    pub arbitrage: f64,
    pub link_capacity: f64,
    pub station_capacity: f64,
    pub floors: f64,
}

impl ConditionResiduals {
    pub fn max(&self) -> f64 {
        [
            self.consumer_optimality,
            self.producer_optimality,
            self.demand_balance,
            self.supply_balance,
            self.arbitrage,
            self.link_capacity,
            self.station_capacity,
            self.floors,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// Shipments indexed `[consumer][producer][commodity]`.
    pub flows: Vec<Vec<Vec<f64>>>,
    pub consumption: Vec<Vec<f64>>,
    pub production: Vec<Vec<f64>>,
    pub consumer_prices: Vec<Vec<f64>>,
    pub producer_prices: Vec<Vec<f64>>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub residuals: ConditionResiduals,
}

impl EquilibriumSolution {
    pub fn relative_gap(&self) -> f64 {
        self.gap.abs() / (1.0 + self.primal_value.abs())
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.iter().flatten().flatten().sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative_gap() <= tol && self.residuals.passes(tol)
    }
}

/// Σ Π_i(p_i) + Σ π_j(p̂_j).
pub(crate) fn profit_sum(agents: &AgentSpec, p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let cons: f64 = p.iter().enumerate().map(|(i, pi)| agents.consumer_profit(i, pi)).sum();
    let prod: f64 = q.iter().enumerate().map(|(j, qj)| agents.producer_profit(j, qj)).sum();
    cons + prod
}

pub fn solve_perfect(
    net: &Network,
    agents: &AgentSpec,
    tariffs: &Tariffs,
    settings: &SolverSettings,
) -> Result<EquilibriumSolution, SolveError> {
    agents.validate(net)?;
    tariffs.validate(net)?;
    let (n_cons, n_prod, n_comm) = (net.consumers().len(), net.producers().len(), net.n_commodities());
    let mut columns = Vec::new();
    for i in 0..n_cons {
        for j in 0..n_prod {
            for k in 0..n_comm {
                if let (Some(c), Some(_), Some(_)) = (tariffs.get(i, j, k), agents.revenue(i, k), agents.cost(j, k)) {
                    columns.push(Column { consumer: i, producer: j, commodity: k, cost: c, rows: vec![], floor: None });
                }
            }
        }
    }
    let master = Master { agents, columns, capacities: vec![], floors: vec![] };
    let ms = master.solve(&settings.qp())?;
    let mut flows = vec![vec![vec![0.0; n_comm]; n_prod]; n_cons];
    for (col, x) in master.columns.iter().zip(&ms.column_flows) {
        flows[col.consumer][col.producer][col.commodity] += x;
    }
    let dual_value = profit_sum(agents, &ms.consumer_prices, &ms.producer_prices);
    let mut sol = EquilibriumSolution {
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
    sol.residuals = verify_equilibrium(&sol, net, agents, tariffs);
    Ok(sol)
}

/// Agent optimality (profit shortfall against the conjugate), market balance
/// with complementary slackness, and arbitrage-freeness of delivered prices.
pub fn verify_equilibrium(sol: &EquilibriumSolution, net: &Network, agents: &AgentSpec, tariffs: &Tariffs) -> ConditionResiduals {
    let mut r = agent_and_balance_residuals(sol, agents);
    let (n_cons, n_prod, n_comm) = (net.consumers().len(), net.producers().len(), net.n_commodities());
    for i in 0..n_cons {
        for j in 0..n_prod {
            for k in 0..n_comm {
                let z = sol.flows[i][j][k];
                let p = sol.consumer_prices[i][k];
                let q = sol.producer_prices[j][k];
                let v = match tariffs.get(i, j, k) {
                    Some(c) => (p - q - c).max(0.0).max((z * (q + c - p)).abs()),
                    None => z.abs(),
                };
                r.arbitrage = r.arbitrage.max(v).max(-z);
            }
        }
    }
    r
}

/// Conditions shared by every equilibrium variant: agent optimality and
/// market balance.
pub(crate) fn agent_and_balance_residuals(sol: &EquilibriumSolution, agents: &AgentSpec) -> ConditionResiduals {
    let mut r = ConditionResiduals::default();
    for (i, row) in agents.consumers.iter().enumerate() {
        for (k, f) in row.iter().enumerate() {
            let x = sol.consumption[i][k];
            let p = sol.consumer_prices[i][k];
            let inflow: f64 = sol.flows[i].iter().map(|z| z[k]).sum();
            let opt = match f {
                Some(f) => (f.profit(p) - (f.value(x) - p * x)).max(0.0) + (-x).max(0.0),
                None => x.abs(),
            };
            r.consumer_optimality = r.consumer_optimality.max(opt);
            let bal = (x - inflow).max(0.0).max((p * (x - inflow)).abs()).max(-p);
            r.demand_balance = r.demand_balance.max(bal);
        }
    }
    for (j, row) in agents.producers.iter().enumerate() {
        for (k, g) in row.iter().enumerate() {
            let y = sol.production[j][k];
            let q = sol.producer_prices[j][k];
            let outflow: f64 = sol.flows.iter().map(|zi| zi[j][k]).sum();
            let opt = match g {
                Some(g) => {
                    let over = (y - g.cap).max(0.0);
                    let cost = g.value(y.min(g.cap));
                    (g.profit(q) - (q * y - cost)).max(0.0) + over + (-y).max(0.0)
                }
                None => y.abs(),
            };
            r.producer_optimality = r.producer_optimality.max(opt);
            let bal = (outflow - y).max(0.0).max((q * (y - outflow)).abs()).max(-q);
            r.supply_balance = r.supply_balance.max(bal);
        }
    }
    r
}

/// Residual of the complementarity form: with delivered-price wedge
/// P = p̂ + c − p evaluated from marginal values at the flows, require
/// P ≥ 0 and P·z = 0. At kinks the wedge closest to zero is used.
pub fn vi_residual(flows: &[Vec<Vec<f64>>], agents: &AgentSpec, tariffs: &Tariffs) -> f64 {
    let n_cons = flows.len();
    let n_prod = flows.first().map_or(0, |r| r.len());
    let n_comm = flows.first().and_then(|r| r.first()).map_or(0, |r| r.len());
    let tol = 1e-9;
    let mut worst: f64 = 0.0;
    for i in 0..n_cons {
        for j in 0..n_prod {
            for k in 0..n_comm {
                let (Some(c), Some(f), Some(g)) = (tariffs.get(i, j, k), agents.revenue(i, k), agents.cost(j, k)) else {
                    continue;
                };
                let x: f64 = (0..n_prod).map(|jj| flows[i][jj][k]).sum();
                let y: f64 = (0..n_cons).map(|ii| flows[ii][j][k]).sum();
                let (plo, phi) = f.price_interval(x, tol);
                let (qlo, qhi) = g.price_interval(y, tol);
                let (wlo, whi) = (qlo + c - phi, qhi + c - plo);
                let z = flows[i][j][k];
                let w = if wlo > 0.0 {
                    wlo
                } else if whi < 0.0 {
                    whi
                } else {
                    0.0
                };
                worst = worst.max((-w).max(0.0)).max((w * z).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{QuadraticConsumer, QuadraticProducer};
    use crate::network::{Capacity, NetworkBuilder};

    fn q1() -> (Network, AgentSpec) {
        let mut b = NetworkBuilder::new();
        let s = b.station("S", 0.0, Capacity::Unlimited);
        let t = b.station("T", 0.0, Capacity::Unlimited);
        b.link(s, t, 2.0, Capacity::Unlimited);
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

    fn exact_q1() -> EquilibriumSolution {
        EquilibriumSolution {
            flows: vec![vec![vec![4.0]]],
            consumption: vec![vec![4.0]],
            production: vec![vec![4.0]],
            consumer_prices: vec![vec![12.0]],
            producer_prices: vec![vec![10.0]],
            primal_value: 32.0,
            dual_value: 32.0,
            gap: 0.0,
            residuals: ConditionResiduals::default(),
        }
    }

    #[test]
    fn q1_matches_closed_form() {
        let (net, agents) = q1();
        let sol = solve_perfect(&net, &agents, &Tariffs::base(&net), &SolverSettings::default()).unwrap();
        assert!((sol.flows[0][0][0] - 4.0).abs() < 1e-8);
        assert!((sol.producer_prices[0][0] - 10.0).abs() < 1e-7);
        assert!((sol.consumer_prices[0][0] - 12.0).abs() < 1e-7);
        assert!((sol.primal_value - 32.0).abs() < 1e-8);
        assert!(sol.relative_gap() < 1e-8);
        assert!(sol.residuals.passes(1e-7), "{:?}", sol.residuals);
    }

    #[test]
    fn prohibitive_tariff_stops_trade_with_marginal_prices() {
        let (net, agents) = q1();
        let sol = solve_perfect(&net, &agents, &Tariffs::uniform(&net, 18.0), &SolverSettings::default()).unwrap();
        assert!(sol.flows[0][0][0].abs() < 1e-7);
        assert!((sol.consumer_prices[0][0] - 20.0).abs() < 1e-6);
        assert!((sol.producer_prices[0][0] - 2.0).abs() < 1e-6);
        assert!(sol.passes(1e-6));
    }

    #[test]
    fn exact_solution_has_tiny_residuals() {
        let (net, agents) = q1();
        let r = verify_equilibrium(&exact_q1(), &net, &agents, &Tariffs::uniform(&net, 2.0));
        assert!(r.max() <= 1e-10, "{r:?}");
    }

    #[test]
    fn perturbed_price_is_flagged() {
        let (net, agents) = q1();
        let mut sol = exact_q1();
        sol.consumer_prices[0][0] += 0.1;
        let r = verify_equilibrium(&sol, &net, &agents, &Tariffs::uniform(&net, 2.0));
        assert!(r.arbitrage.max(r.consumer_optimality) >= 0.09, "{r:?}");
    }

    #[test]
    fn empty_candidate_reports_forgone_profit() {
        let (net, agents) = q1();
        let sol = EquilibriumSolution {
            flows: vec![vec![vec![0.0]]],
            consumption: vec![vec![0.0]],
            production: vec![vec![0.0]],
            consumer_prices: vec![vec![0.0]],
            producer_prices: vec![vec![0.0]],
            primal_value: 0.0,
            dual_value: 0.0,
            gap: 0.0,
            residuals: ConditionResiduals::default(),
        };
        let r = verify_equilibrium(&sol, &net, &agents, &Tariffs::uniform(&net, 2.0));
        assert!((r.consumer_optimality - 100.0).abs() < 1e-12);
    }

    #[test]
    fn vi_residual_vanishes_at_equilibrium() {
        let (_, agents) = q1();
        let net = q1().0;
        let t = Tariffs::uniform(&net, 2.0);
        assert!(vi_residual(&exact_q1().flows, &agents, &t) < 1e-12);
        assert!(vi_residual(&[vec![vec![3.0]]], &agents, &t) > 1.0);
    }
}
