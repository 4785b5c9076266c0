//! Dispatch of a validated scenario to the analyses, with certificates.

use crate::report::{num, Check, Report, Table};
use crate::scenario::{Analysis, Request, Scenario};
use railprice_core::market_power::{
    cournot_best_response, cournot_equilibrium, edgeworth_search, markup_sweep, monopoly_optimum, stackelberg_chain, EdgeworthResult,
    QuadraticMarket,
};
use railprice_core::policy::{investment_report, quota_tariffs, quota_tariffs_with, solve_with_floors, QuotaTariffs};
use railprice_core::potential::{
    entropy_solve, frank_wolfe, logit_dynamics, recover_multipliers, EntropyOptions, FwOptions, LogitOptions, NewtonOptions,
    ShareOption, Smoothing,
};
use railprice_core::{
    certify_routes, equilibrium_report, min_cost_route, route_cost, solve_capacitated, solve_perfect, verify_equilibrium, AgentSpec,
    CapacitatedSolution, EquilibriumSolution, Network, PotentialError, Resource, Surcharges, Tariffs,
};
use serde_json::json;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{module}: {message}")]
pub struct RunError {
    pub module: &'static str,
    pub message: String,
    /// (μ, residual) per continuation step when the potential solver fails.
    pub trace: Vec<(f64, f64)>,
}

impl RunError {
    fn new(module: &'static str, e: impl ToString) -> Self {
        RunError { module, message: e.to_string(), trace: Vec::new() }
    }
}

fn err<E: ToString>(module: &'static str) -> impl Fn(E) -> RunError {
    move |e| RunError::new(module, e)
}

fn potential_err(e: PotentialError) -> RunError {
    let trace = match &e {
        PotentialError::Continuation { trace, .. } => trace.clone(),
        _ => Vec::new(),
    };
    RunError { module: "potential", message: e.to_string(), trace }
}

pub fn resource_label(net: &Network, link_names: &[String], r: Resource) -> String {
    match r {
        Resource::Link(l) => format!("link {}", link_names.get(l).cloned().unwrap_or_else(|| {
            let link = &net.links()[l];
            format!("{}->{}", net.stations()[link.from].name, net.stations()[link.to].name)
        })),
        Resource::Station(s) => format!("station {}", net.stations()[s].name),
    }
}

fn route_label(net: &Network, route: &railprice_core::Route) -> String {
    route.stations.iter().map(|&s| net.stations()[s].name.as_str()).collect::<Vec<_>>().join(">")
}

pub fn run_scenario(s: &Scenario) -> Result<Report, RunError> {
    match &s.request {
        Request::Solve { markup } => run_solve(s, *markup),
        Request::Capacitated => run_capacitated(s),
        Request::MarketPower { max_carriers, markups } => run_market_power(s, *max_carriers, markups.as_deref()),
        Request::Subsidy { floors, quotas } => run_subsidy(s, floors, quotas.as_ref()),
        Request::Invest { changes } => run_invest(s, changes),
        Request::Potential { entropy, logit } => run_potential(s, *entropy, *logit),
        Request::Edgeworth { cases, grid_max } => run_edgeworth(s, cases, *grid_max),
    }
}

fn solve_tariffs(net: &Network, markup: f64) -> Tariffs {
    Tariffs::base(net).shifted(markup)
}

/// Σ F(X) − Σ G(Y) − Σ tariff · flow, from flows alone.
fn perfect_primal(sol: &EquilibriumSolution, agents: &AgentSpec, tariffs: &Tariffs) -> f64 {
    let mut v = 0.0;
    for (i, row) in sol.flows.iter().enumerate() {
        for (j, col) in row.iter().enumerate() {
            for (k, x) in col.iter().enumerate() {
                if let Some(c) = tariffs.get(i, j, k) {
                    v -= c * x;
                }
            }
        }
    }
    v + agent_surplus(sol, agents)
}

fn agent_surplus(sol: &EquilibriumSolution, agents: &AgentSpec) -> f64 {
    let x = sol.flows.iter().map(|row| {
        let n = row.first().map_or(0, |c| c.len());
        (0..n).map(|k| row.iter().map(|c| c[k]).sum()).collect::<Vec<f64>>()
    });
    let cons: f64 = x.enumerate().map(|(i, xi)| agents.consumer_value(i, &xi)).sum();
    let n_prod = sol.production.len();
    let prod: f64 = (0..n_prod)
        .map(|j| {
            let n = sol.flows.first().map_or(0, |r| r[j].len());
            let y: Vec<f64> = (0..n).map(|k| sol.flows.iter().map(|r| r[j][k]).sum()).collect();
            agents.producer_value(j, &y)
        })
        .sum();
    cons - prod
}

fn profits(sol: &EquilibriumSolution, agents: &AgentSpec) -> f64 {
    let c: f64 = sol.consumer_prices.iter().enumerate().map(|(i, p)| agents.consumer_profit(i, p)).sum();
    let p: f64 = sol.producer_prices.iter().enumerate().map(|(j, p)| agents.producer_profit(j, p)).sum();
    c + p
}

fn perfect_checks(sol: &EquilibriumSolution, net: &Network, agents: &AgentSpec, tariffs: &Tariffs, tol: f64) -> Vec<Check> {
    let primal = perfect_primal(sol, agents, tariffs);
    let dual = profits(sol, agents);
    let r = verify_equilibrium(sol, net, agents, tariffs);
    vec![
        Check::within("duality_gap", (dual - primal).abs() / (1.0 + primal.abs()), tol),
        Check::within("equilibrium_residual", r.max(), tol),
    ]
}

fn run_solve(s: &Scenario, markup: f64) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("solve"))?;
    let tariffs = solve_tariffs(net, markup);
    let sol = solve_perfect(net, agents, &tariffs, &s.settings.solver()).map_err(err("equilibrium"))?;
    let checks = perfect_checks(&sol, net, agents, &tariffs, s.settings.tolerance);
    let mut flows = Table::new("flows", &["consumer", "producer", "commodity", "tariff", "flow", "consumer_price", "producer_price"]);
    for (i, row) in sol.flows.iter().enumerate() {
        for (j, col) in row.iter().enumerate() {
            for (k, x) in col.iter().enumerate() {
                let (Some(c), Some(_), Some(_)) = (tariffs.get(i, j, k), agents.revenue(i, k), agents.cost(j, k)) else { continue };
                flows.push(vec![
                    net.consumers()[i].name.clone(),
                    net.producers()[j].name.clone(),
                    net.commodities()[k].clone(),
                    num(c),
                    num(*x),
                    num(sol.consumer_prices[i][k]),
                    num(sol.producer_prices[j][k]),
                ]);
            }
        }
    }
    let result = json!({
        "markup": markup,
        "primal_value": sol.primal_value,
        "dual_value": sol.dual_value,
        "relative_gap": sol.relative_gap(),
        "total_flow": sol.total_flow(),
        "solution": sol,
    });
    Ok(Report::new(&s.name, Analysis::Solve, checks, result, vec![flows]))
}

fn capacitated_checks(sol: &CapacitatedSolution, net: &Network, agents: &AgentSpec, tol: f64) -> Vec<Check> {
    let primal = agent_surplus(&sol.equilibrium, agents) - sol.base_revenue(net);
    let intermediary = sol.intermediary_profit(net);
    let dual = profits(&sol.equilibrium, agents) + intermediary;
    let cert = certify_routes(sol, net);
    vec![
        Check::within("duality_gap", (dual - primal).abs() / (1.0 + primal.abs()), tol),
        Check::within("equilibrium_residual", equilibrium_report(sol, net, agents).max(), tol),
        Check::within(
            "intermediary_identity",
            (intermediary - sol.surcharge_revenue()).abs() / (1.0 + intermediary.abs()),
            tol,
        ),
        Check::holds("route_certificate", cert.passed()),
    ]
}

fn surcharge_table(name: &str, sol: &CapacitatedSolution, net: &Network, link_names: &[String]) -> Table {
    let mut t = Table::new(name, &["resource", "commodity", "capacity", "load", "surcharge"]);
    for r in net.capacitated_resources() {
        let loads = sol.loads_by_commodity(r);
        match &sol.quotas {
            Some(q) => {
                let e = q.resources.iter().position(|x| *x == r);
                for (k, name) in net.commodities().iter().enumerate() {
                    let cap = e.map_or(f64::NAN, |e| q.caps[e][k]);
                    t.push(vec![resource_label(net, link_names, r), name.clone(), num(cap), num(loads[k]), num(sol.surcharges[k].get(r))]);
                }
            }
            None => t.push(vec![
                resource_label(net, link_names, r),
                "all".into(),
                num(net.capacity(r).finite().unwrap()),
                num(sol.load(r)),
                num(sol.surcharges[0].get(r)),
            ]),
        }
    }
    t
}

fn route_table(sol: &CapacitatedSolution, net: &Network) -> Table {
    let mut t = Table::new("flows", &["consumer", "producer", "commodity", "route", "flow"]);
    for (route, flows) in sol.routes.iter().zip(&sol.route_flows) {
        for (k, x) in flows.iter().enumerate() {
            if *x > 0.0 {
                t.push(vec![
                    net.consumers()[route.consumer].name.clone(),
                    net.producers()[route.producer].name.clone(),
                    net.commodities()[k].clone(),
                    route_label(net, route),
                    num(*x),
                ]);
            }
        }
    }
    t
}

fn run_capacitated(s: &Scenario) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("capacitated"))?;
    let sol = solve_capacitated(net, agents, &s.settings.solver()).map_err(err("capacitated"))?;
    let checks = capacitated_checks(&sol, net, agents, s.settings.tolerance);
    let result = json!({
        "primal_value": sol.equilibrium.primal_value,
        "dual_value": sol.equilibrium.dual_value,
        "relative_gap": sol.equilibrium.relative_gap(),
        "intermediary_profit": sol.intermediary_profit(net),
        "surcharge_revenue": sol.surcharge_revenue(),
        "route_certificate": certify_routes(&sol, net),
        "solution": sol,
    });
    let tables = vec![route_table(&sol, net), surcharge_table("surcharges", &sol, net, &s.link_names)];
    Ok(Report::new(&s.name, Analysis::Capacitated, checks, result, tables))
}

fn run_market_power(s: &Scenario, max_carriers: u64, markups: Option<&[f64]>) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("market-power"))?;
    if net.producers().len() != 1 || net.consumers().len() != 1 || net.n_commodities() != 1 {
        return Err(RunError::new("market-power", "closed forms need exactly one producer, one consumer and one commodity"));
    }
    let zero = Surcharges::zero(net);
    let route = min_cost_route(net, 0, 0, &zero).map_err(err("market-power"))?;
    let base_cost = route_cost(net, &route, &zero).map_err(err("market-power"))?;
    let (Some(f), Some(g)) = (agents.revenue(0, 0), agents.cost(0, 0)) else {
        return Err(RunError::new("market-power", "the producer and consumer must both trade the commodity"));
    };
    let m = QuadraticMarket::new(*f, *g, base_cost).map_err(err("market-power"))?;
    let settings = s.settings.solver();
    let tol = s.settings.tolerance;
    let mut checks = Vec::new();

    let competitive = solve_perfect(net, agents, &Tariffs::base(net), &settings).map_err(err("equilibrium"))?;
    checks.push(Check::within("competitive_flow_matches_closed_form", (competitive.total_flow() - m.flow(base_cost)).abs(), tol));

    let mono = monopoly_optimum(&m).map_err(err("market-power"))?;
    checks.push(Check::within("monopoly_halves_flow", (mono.flow / mono.competitive_flow - 0.5).abs(), 1e-9));
    checks.push(Check::within("monopoly_theta", (mono.theta - 2.0 / 3.0).abs(), 1e-9));

    let mut cournot = Table::new("cournot", &["carriers", "hhi", "tariff", "flow", "theta", "throughput_factor", "theta_factor", "best_response_flow"]);
    let (mut law, mut oracle) = (0.0f64, 0.0f64);
    let mut outcomes = Vec::new();
    for n in 1..=max_carriers {
        let c = cournot_equilibrium(&m, n).map_err(err("market-power"))?;
        let nf = n as f64;
        law = law.max((c.outcome.theta - 2.0 * nf / (2.0 * nf + 1.0)).abs());
        let br = cournot_best_response(&m, n as usize, 1e-13, 1_000_000);
        oracle = oracle.max(if br.converged { (br.total - c.outcome.flow).abs() } else { f64::INFINITY });
        cournot.push(vec![
            n.to_string(),
            num(c.hhi),
            num(c.outcome.tariff),
            num(c.outcome.flow),
            num(c.outcome.theta),
            num(c.throughput_factor),
            num(c.theta_factor),
            num(br.total),
        ]);
        outcomes.push(c);
    }
    checks.push(Check::within("cournot_theta_law", law, 1e-9));
    checks.push(Check::within("cournot_best_response_agreement", oracle, 1e-8));
    checks.push(Check::within("cournot_single_carrier_is_monopoly", (outcomes[0].outcome.flow - mono.flow).abs(), 1e-12));

    let stackelberg = match stackelberg_chain(&m) {
        Ok(st) => {
            checks.push(Check::holds("stackelberg_exceeds_monopoly", st.exceeds_monopoly));
            json!(st)
        }
        Err(e) => json!({ "not_applicable": e.to_string() }),
    };

    let grid: Vec<f64> = match markups {
        Some(v) => v.to_vec(),
        None => (0..=20).map(|k| m.margin() * k as f64 / 20.0).collect(),
    };
    let sweep = markup_sweep(net, agents, &Tariffs::base(net), &grid, &settings).map_err(err("market-power"))?;
    let mut table = Table::new("sweep", &["markup", "flow", "intermediary_profit", "welfare_loss", "theta"]);
    let mut excess = 0.0f64;
    for p in &sweep {
        excess = excess.max((p.intermediary_profit - p.welfare_loss) / (1.0 + p.welfare_loss.abs()));
        table.push(vec![num(p.markup), num(p.flow), num(p.intermediary_profit), num(p.welfare_loss), num(p.theta)]);
    }
    checks.push(Check::within("intermediary_profit_within_welfare_loss", excess.max(0.0), tol));

    let result = json!({
        "market": m,
        "competitive_flow": competitive.total_flow(),
        "monopoly": mono,
        "cournot": outcomes,
        "stackelberg": stackelberg,
        "sweep": sweep,
    });
    Ok(Report::new(&s.name, Analysis::MarketPower, checks, result, vec![cournot, table]))
}

fn tariff_table(q: &QuotaTariffs, net: &Network) -> Table {
    let mut t = Table::new("tariffs", &["producer", "consumer", "commodity", "route", "freight", "delivered"]);
    for d in &q.schedule {
        t.push(vec![
            net.producers()[d.producer].name.clone(),
            net.consumers()[d.consumer].name.clone(),
            net.commodities()[d.commodity].clone(),
            route_label(net, &q.solution.routes[d.route]),
            num(d.freight),
            num(d.delivered),
        ]);
    }
    t
}

fn run_subsidy(s: &Scenario, floors: &[railprice_core::Floor], quotas: Option<&railprice_core::Quotas>) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("subsidy"))?;
    let settings = s.settings.solver();
    let tol = s.settings.tolerance;
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let floor_solution = match quotas {
        Some(_) => None,
        None => {
            let sol = solve_with_floors(net, agents, floors, &settings).map_err(err("policy"))?;
            checks.push(Check::within("floor_duality_gap", sol.equilibrium.relative_gap(), tol));
            checks.push(Check::within("floor_equilibrium_residual", equilibrium_report(&sol, net, agents).max(), tol));
            let mut t = Table::new("floors", &["consumer", "producer", "commodity", "minimum", "flow", "subsidy"]);
            for f in &sol.floors {
                t.push(vec![
                    net.consumers()[f.floor.consumer].name.clone(),
                    net.producers()[f.floor.producer].name.clone(),
                    net.commodities()[f.floor.commodity].clone(),
                    num(f.floor.minimum),
                    num(f.flow),
                    num(f.subsidy),
                ]);
            }
            tables.push(t);
            Some(sol)
        }
    };
    let q = match quotas {
        Some(q) => quota_tariffs_with(net, agents, q, &settings),
        None => quota_tariffs(net, agents, floors, &settings),
    }
    .map_err(err("policy"))?;
    checks.push(Check::within("quota_duality_gap", q.solution.equilibrium.relative_gap(), tol));
    checks.push(Check::within("quota_equilibrium_residual", equilibrium_report(&q.solution, net, agents).max(), tol));
    if quotas.is_none() {
        checks.push(Check::within("quota_round_trip", q.max_flow_deviation, tol));
    }
    tables.push(tariff_table(&q, net));
    tables.push(surcharge_table("surcharges", &q.solution, net, &s.link_names));
    let result = json!({
        "floor_solution": floor_solution,
        "quota_tariffs": q,
    });
    Ok(Report::new(&s.name, Analysis::Subsidy, checks, result, tables))
}

fn run_invest(s: &Scenario, changes: &[(Resource, f64)]) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("invest"))?;
    let tol = s.settings.tolerance;
    let r = investment_report(net, agents, changes, &s.settings.solver()).map_err(err("policy"))?;
    let mut checks = vec![
        Check::within("accounting_identity", r.identity_residual, tol),
        Check::within("intermediary_identity", r.rent_residual, tol),
    ];
    let mut t = Table::new(
        "sensitivities",
        &["resource", "delta", "shadow_value", "primal_change", "first_order", "intermediary_change", "agent_profit_change"],
    );
    for x in &r.sensitivities {
        let label = resource_label(net, &s.link_names, x.resource);
        if x.delta > 0.0 && x.shadow_value > tol {
            checks.push(Check::holds(format!("primal_increases[{label}]"), x.primal_change > 0.0));
            checks.push(Check::within(format!("intermediary_weakly_decreases[{label}]"), x.intermediary_change.max(0.0), tol));
        }
        t.push(vec![
            label,
            num(x.delta),
            num(x.shadow_value),
            num(x.primal_change),
            num(x.first_order),
            num(x.intermediary_change),
            num(x.agent_profit_change),
        ]);
    }
    Ok(Report::new(&s.name, Analysis::Invest, checks, json!(r), vec![t]))
}

fn run_potential(s: &Scenario, entropy: bool, logit: bool) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("potential"))?;
    let st = &s.settings;
    let exact = solve_capacitated(net, agents, &st.solver()).map_err(err("capacitated"))?;
    let resources = net.capacitated_resources();
    let labels: Vec<String> = resources.iter().map(|&r| resource_label(net, &s.link_names, r)).collect();
    let mut headers = vec!["gamma", "mu", "total_flow", "potential", "residual"];
    let surcharge_cols: Vec<String> = labels.iter().map(|l| format!("surcharge[{l}]")).collect();
    headers.extend(surcharge_cols.iter().map(|s| s.as_str()));
    let mut table = Table::new("continuation", &headers);
    let mut checks = Vec::new();
    let mut runs = Vec::new();
    for &gamma in &st.gammas {
        let c = recover_multipliers(net, agents, st.family, gamma, &st.mu_schedule, &NewtonOptions::default()).map_err(potential_err)?;
        for step in &c.steps {
            let mut row = vec![num(gamma), num(step.mu), num(step.total_flow), num(step.potential), num(step.residual)];
            row.extend(resources.iter().map(|&r| num(step.surcharges.get(r))));
            table.push(row);
        }
        // Multi-commodity instances without quotas share one surcharge map.
        let gap = resources.iter().map(|&r| (c.surcharges.get(r) - exact.surcharges[0].get(r)).abs()).fold(0.0, f64::max);
        checks.push(Check::within(format!("multiplier_agreement[gamma={gamma}]"), gap, st.multiplier_tolerance));
        let flows = c.state.pair_flows(net);
        let fdiff = flows
            .iter()
            .flatten()
            .flatten()
            .zip(exact.equilibrium.flows.iter().flatten().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        checks.push(Check::within(format!("flow_agreement[gamma={gamma}]"), fdiff, st.flow_tolerance));
        runs.push(json!({ "gamma": gamma, "continuation": c }));
    }
    let mut tables = vec![table];
    let smoothing = Smoothing::new(st.family, st.mu, st.gammas[0]).map_err(potential_err)?;
    let fw = frank_wolfe(net, agents, smoothing, &FwOptions::default()).map_err(potential_err)?;
    let mut result = json!({
        "exact_surcharges": exact.surcharges,
        "exact_flows": exact.equilibrium.flows,
        "continuations": runs,
        "frank_wolfe": {
            "mu": st.mu,
            "potential": fw.potential,
            "gap": fw.gap,
            "iterations": fw.iterations,
            "converged": fw.converged,
            "flows": fw.state.pair_flows(net),
        },
    });
    if entropy || logit {
        let e = entropy_solve(net, agents, st.eta, smoothing, &EntropyOptions::default()).map_err(potential_err)?;
        checks.push(Check::within("entropy_kkt_residual", e.kkt_residual, 1e-6));
        let option_label = |o: &ShareOption| match o {
            ShareOption::Path(p) => {
                let v = &e.state.paths[*p];
                format!("{} {}", net.commodities()[v.commodity], route_label(net, &v.route))
            }
            ShareOption::Idle(k) => format!("{} idle", net.commodities()[*k]),
        };
        let mut shares = Table::new("shares", &["option", "entropy_share", "logit_share", "expected_count"]);
        let l = if logit {
            let opts = LogitOptions { steps: st.logit_steps, population: st.population, mass: None, seed: Some(st.seed), record_every: 10 };
            Some(logit_dynamics(net, agents, st.eta, smoothing, &opts).map_err(potential_err)?)
        } else {
            None
        };
        for (n, o) in e.options.iter().enumerate() {
            shares.push(vec![
                option_label(o),
                num(e.shares[n]),
                l.as_ref().map_or(String::new(), |l| num(l.terminal.shares[n])),
                l.as_ref().map_or(String::new(), |l| num(l.expected_counts[n])),
            ]);
        }
        tables.push(shares);
        if let Some(l) = &l {
            let dev = l.terminal.shares.iter().zip(&e.shares).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            checks.push(Check::within("logit_matches_entropy", dev, st.share_tolerance));
            let rise = l.trajectory.windows(2).map(|w| w[1].objective - w[0].objective).fold(0.0f64, f64::max);
            checks.push(Check::within("logit_objective_nonincreasing", rise, 1e-12));
            let mut t = Table::new("logit", &["step", "objective", "step_size", "max_change"]);
            for p in &l.trajectory {
                t.push(vec![p.step.to_string(), num(p.objective), num(p.step_size), num(p.max_change)]);
            }
            tables.push(t);
        }
        result["entropy"] = json!(e);
        if let Some(l) = l {
            result["logit"] = json!({ "terminal_shares": l.terminal.shares, "expected_counts": l.expected_counts, "steps": st.logit_steps });
        }
    }
    Ok(Report::new(&s.name, Analysis::Potential, checks, result, tables))
}

fn run_edgeworth(s: &Scenario, cases: &[railprice_core::market_power::EdgeworthInstance], grid_max: Option<u32>) -> Result<Report, RunError> {
    let start = Instant::now();
    let mut results: Vec<EdgeworthResult> = Vec::new();
    let n_services = cases.iter().map(|c| c.costs.len()).max().unwrap_or(0);
    let mut headers: Vec<String> = vec!["case".into()];
    headers.extend((1..=n_services).map(|k| format!("cost_{k}")));
    headers.extend((1..=n_services).map(|k| format!("tariff_{k}")));
    headers.push("profit".into());
    let header_refs: Vec<&str> = headers.iter().map(|h| h.as_str()).collect();
    let mut t = Table::new("edgeworth", &header_refs);
    for (n, inst) in cases.iter().enumerate() {
        let grid = match grid_max {
            Some(top) => vec![(0..=top).map(f64::from).collect(); inst.costs.len()],
            None => inst.integer_grid(),
        };
        let r = edgeworth_search(inst, &grid).map_err(err("market-power"))?;
        let mut row = vec![n.to_string()];
        row.extend(inst.costs.iter().map(|c| num(*c)));
        row.extend((inst.costs.len()..n_services).map(|_| String::new()));
        row.extend(r.tariffs.iter().map(|c| num(*c)));
        row.extend((inst.costs.len()..n_services).map(|_| String::new()));
        row.push(num(r.profit));
        t.push(row);
        results.push(r);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut checks = vec![Check::holds("search_under_one_second", elapsed < 1.0)];
    // A cost increase on one service answered by lower tariffs on all services.
    let mut flips = Vec::new();
    for w in 0..results.len().saturating_sub(1) {
        let (a, b) = (&results[w], &results[w + 1]);
        let raised = cases[w + 1].costs.iter().zip(&cases[w].costs).any(|(x, y)| x > y);
        let lowered = b.tariffs.iter().zip(&a.tariffs).all(|(x, y)| x < y);
        flips.push(json!({ "from_case": w, "to_case": w + 1, "cost_raised": raised, "all_tariffs_lowered": raised && lowered }));
    }
    for (n, r) in results.iter().enumerate() {
        let best = cases[n].profit(&r.tariffs);
        checks.push(Check::within(format!("profit_consistent[case={n}]"), (best - r.profit).abs(), 0.0));
    }
    let result = json!({ "cases": results, "costs": cases.iter().map(|c| c.costs.clone()).collect::<Vec<_>>(), "transitions": flips });
    Ok(Report::new(&s.name, Analysis::Edgeworth, checks, result, vec![t]))
}

/// Re-checks a saved `solve` or `capacitated` report against its scenario.
pub fn verify_saved(s: &Scenario, saved: &serde_json::Value) -> Result<Report, RunError> {
    let (net, agents) = s.market().map_err(err("verify"))?;
    let tol = s.settings.tolerance;
    let solution = saved.get("result").and_then(|r| r.get("solution")).cloned().ok_or_else(|| {
        RunError::new("verify", "saved report carries no solution; only solve and capacitated reports can be verified")
    })?;
    let checks = match &s.request {
        Request::Solve { markup } => {
            let sol: EquilibriumSolution = serde_json::from_value(solution).map_err(err("verify"))?;
            check_shape(&sol, net)?;
            perfect_checks(&sol, net, agents, &solve_tariffs(net, *markup), tol)
        }
        Request::Capacitated => {
            let sol: CapacitatedSolution = serde_json::from_value(solution).map_err(err("verify"))?;
            check_shape(&sol.equilibrium, net)?;
            if sol.routes.len() != sol.route_flows.len() || sol.surcharges.len() != net.n_commodities() {
                return Err(RunError::new("verify", "saved route data does not match the scenario"));
            }
            for r in &sol.routes {
                railprice_core::Route::new(net, r.producer, r.consumer, r.links.clone()).map_err(err("verify"))?;
            }
            capacitated_checks(&sol, net, agents, tol)
        }
        _ => return Err(RunError::new("verify", format!("analysis {} has no saved solution to verify", s.analysis.name()))),
    };
    let result = json!({ "verified": s.analysis.name() });
    Ok(Report::new(&s.name, s.analysis, checks, result, vec![]))
}

fn check_shape(sol: &EquilibriumSolution, net: &Network) -> Result<(), RunError> {
    let ok = sol.flows.len() == net.consumers().len()
        && sol.flows.iter().all(|r| r.len() == net.producers().len() && r.iter().all(|c| c.len() == net.n_commodities()))
        && sol.consumer_prices.len() == net.consumers().len()
        && sol.producer_prices.len() == net.producers().len();
    if ok {
        Ok(())
    } else {
        Err(RunError::new("verify", "saved solution dimensions do not match the scenario"))
    }
}
