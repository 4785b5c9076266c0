//! Path-flow potential with smoothed capacity costs: Frank–Wolfe and
//! projected Newton minimisation, continuation in the smoothing parameter to
//! recover capacity surcharges, entropy-regularised route shares and a
//! mean-field logit iteration.

use crate::agents::{AgentSpec, Cost, Revenue};
use crate::error::PotentialError;
use crate::network::{enumerate_routes, min_cost_route, route_cost, Capacity, Network, Resource, Route, Surcharges};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    /// τ = t̄(1 + γ u^μ).
    Power,
    /// τ = t̄(1 − μ ln(1 − u)), defined for u < 1.
    Log,
    /// τ = t̄(1 + γ u^(1/μ)).
    SteepPower,
}

/// Smoothed cost of a capacitated arc as a function of its utilisation
/// u = load / capacity. Uncapacitated arcs keep their base tariff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub family: CostFamily,
    pub mu: f64,
    pub gamma: f64,
}

impl Smoothing {
    pub fn new(family: CostFamily, mu: f64, gamma: f64) -> Result<Self, PotentialError> {
        let s = Smoothing { family, mu, gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(PotentialError::Parameter(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(PotentialError::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        Smoothing { mu, ..*self }
    }

    /// Continuation is needed where the cost steepens as μ shrinks.
    fn stiff(&self) -> bool {
        self.family != CostFamily::Power && self.mu < 1e-2
    }
}

pub fn smoothed_cost(s: &Smoothing, base: f64, capacity: Capacity, load: f64) -> Result<f64, PotentialError> {
    let Capacity::Finite(cap) = capacity else { return Ok(base) };
    let u = load.max(0.0) / cap;
    Ok(match s.family {
        CostFamily::Power => base * (1.0 + s.gamma * u.powf(s.mu)),
        CostFamily::Log => {
            if u >= 1.0 {
                return Err(PotentialError::Domain { load, capacity: cap });
            }
            base * (1.0 - s.mu * (-u).ln_1p())
        }
        CostFamily::SteepPower => base * (1.0 + s.gamma * u.powf(1.0 / s.mu)),
    })
}

/// ∫₀^load τ.
pub fn smoothed_integral(s: &Smoothing, base: f64, capacity: Capacity, load: f64) -> Result<f64, PotentialError> {
    let load = load.max(0.0);
    let Capacity::Finite(cap) = capacity else { return Ok(base * load) };
    let u = load / cap;
    Ok(match s.family {
        CostFamily::Power => base * load + base * s.gamma * cap * u.powf(s.mu + 1.0) / (s.mu + 1.0),
        CostFamily::Log => {
            if u >= 1.0 {
                return Err(PotentialError::Domain { load, capacity: cap });
            }
            let w = -u;
            base * load + base * s.mu * cap * ((1.0 - u) * w.ln_1p() + u)
        }
        CostFamily::SteepPower => {
            let e = 1.0 / s.mu + 1.0;
            base * load + base * s.gamma * cap * u.powf(e) / e
        }
    })
}

/// dτ/dload; infinite outside the domain.
fn smoothed_slope(s: &Smoothing, base: f64, capacity: Capacity, load: f64) -> f64 {
    let Capacity::Finite(cap) = capacity else { return 0.0 };
    let u = load.max(0.0) / cap;
    match s.family {
        CostFamily::Power => base * s.gamma * s.mu * u.max(1e-12).powf(s.mu - 1.0) / cap,
        CostFamily::Log => {
            if u >= 1.0 {
                f64::INFINITY
            } else {
                base * s.mu / (cap * (1.0 - u))
            }
        }
        CostFamily::SteepPower => base * s.gamma / s.mu * u.powf(1.0 / s.mu - 1.0) / cap,
    }
}

/// One shipment variable: a route carrying one commodity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathVar {
    pub route: Route,
    pub commodity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlowState {
    pub smoothing: Smoothing,
    pub paths: Vec<PathVar>,
    pub flows: Vec<f64>,
}

impl PathFlowState {
    pub fn new(smoothing: Smoothing) -> Self {
        PathFlowState { smoothing, paths: Vec::new(), flows: Vec::new() }
    }

    fn add_path(&mut self, route: Route, commodity: usize) -> usize {
        match self.paths.iter().position(|p| p.route == route && p.commodity == commodity) {
            Some(ix) => ix,
            None => {
                self.paths.push(PathVar { route, commodity });
                self.flows.push(0.0);
                self.paths.len() - 1
            }
        }
    }

    pub fn route_flow(&self, route: &Route, commodity: usize) -> f64 {
        self.paths
            .iter()
            .zip(&self.flows)
            .filter(|(p, _)| p.commodity == commodity && &p.route == route)
            .map(|(_, x)| x)
            .sum()
    }

    /// Flows aggregated by (consumer, producer, commodity).
    pub fn pair_flows(&self, net: &Network) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![vec![vec![0.0; net.n_commodities()]; net.producers().len()]; net.consumers().len()];
        for (p, x) in self.paths.iter().zip(&self.flows) {
            out[p.route.consumer][p.route.producer][p.commodity] += x;
        }
        out
    }

    pub fn load(&self, r: Resource) -> f64 {
        self.paths.iter().zip(&self.flows).filter(|(p, _)| p.route.resources().any(|x| x == r)).map(|(_, x)| x).sum()
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.iter().sum()
    }
}

struct Col {
    res: Vec<usize>,
    consumer: usize,
    producer: usize,
    commodity: usize,
}

struct Agg {
    loads: Vec<f64>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

struct Model<'a> {
    net: &'a Network,
    agents: &'a AgentSpec,
    s: Smoothing,
    base: Vec<f64>,
    cap: Vec<Capacity>,
    price_scale: f64,
}

impl<'a> Model<'a> {
    fn new(net: &'a Network, agents: &'a AgentSpec, s: Smoothing) -> Result<Self, PotentialError> {
        s.validate()?;
        agents.validate(net)?;
        let resources: Vec<Resource> =
            (0..net.links().len()).map(Resource::Link).chain((0..net.stations().len()).map(Resource::Station)).collect();
        for &r in &resources {
            if net.capacity(r).is_finite() && net.base_tariff(r) <= 0.0 {
                let what = match r {
                    Resource::Link(l) => {
                        let link = &net.links()[l];
                        format!("link {}->{}", net.stations()[link.from].name, net.stations()[link.to].name)
                    }
                    Resource::Station(st) => format!("station {}", net.stations()[st].name),
                };
                return Err(PotentialError::ZeroBaseTariff(what));
            }
        }
        let price_scale = 1.0 + agents.consumers.iter().flatten().flatten().map(|f| f.b).fold(0.0, f64::max);
        Ok(Model {
            net,
            agents,
            s,
            base: resources.iter().map(|&r| net.base_tariff(r)).collect(),
            cap: resources.iter().map(|&r| net.capacity(r)).collect(),
            price_scale,
        })
    }

    fn index(&self, r: Resource) -> usize {
        match r {
            Resource::Link(l) => l,
            Resource::Station(s) => self.net.links().len() + s,
        }
    }

    fn cols(&self, paths: &[PathVar]) -> Vec<Col> {
        paths
            .iter()
            .map(|p| Col {
                res: p.route.resources().map(|r| self.index(r)).collect(),
                consumer: p.route.consumer,
                producer: p.route.producer,
                commodity: p.commodity,
            })
            .collect()
    }

    fn aggregate(&self, cols: &[Col], x: &[f64]) -> Agg {
        let k = self.net.n_commodities();
        let mut a = Agg {
            loads: vec![0.0; self.base.len()],
            x: vec![vec![0.0; k]; self.net.consumers().len()],
            y: vec![vec![0.0; k]; self.net.producers().len()],
        };
        for (c, &v) in cols.iter().zip(x) {
            for &r in &c.res {
                a.loads[r] += v;
            }
            a.x[c.consumer][c.commodity] += v;
            a.y[c.producer][c.commodity] += v;
        }
        a
    }

    /// Ψ, or +∞ outside its domain.
    fn value(&self, a: &Agg) -> f64 {
        let mut total = 0.0;
        for (j, row) in a.y.iter().enumerate() {
            for (k, &y) in row.iter().enumerate() {
                if let Some(g) = self.agents.cost(j, k) {
                    total += g.value(y);
                }
            }
        }
        for (i, row) in a.x.iter().enumerate() {
            for (k, &x) in row.iter().enumerate() {
                if let Some(f) = self.agents.revenue(i, k) {
                    total -= f.value(x);
                }
            }
        }
        for (r, &f) in a.loads.iter().enumerate() {
            match smoothed_integral(&self.s, self.base[r], self.cap[r], f) {
                Ok(v) => total += v,
                Err(_) => return f64::INFINITY,
            }
        }
        total
    }

    fn arc_costs(&self, a: &Agg) -> Vec<f64> {
        a.loads
            .iter()
            .enumerate()
            .map(|(r, &f)| smoothed_cost(&self.s, self.base[r], self.cap[r], f).unwrap_or(f64::INFINITY))
            .collect()
    }

    fn boundary(&self, a: &Agg, j: usize, i: usize, k: usize) -> f64 {
        let g = self.agents.cost(j, k).map_or(f64::INFINITY, |g| g.marginal(a.y[j][k]));
        let f = self.agents.revenue(i, k).map_or(0.0, |f| f.marginal(a.x[i][k]));
        g - f
    }

    /// ∂Ψ/∂x for each column.
    fn costs(&self, cols: &[Col], a: &Agg) -> Vec<f64> {
        let tau = self.arc_costs(a);
        cols.iter()
            .map(|c| c.res.iter().map(|&r| tau[r]).sum::<f64>() + self.boundary(a, c.producer, c.consumer, c.commodity))
            .collect()
    }

    fn hessian(&self, cols: &[Col], a: &Agg) -> DMatrix<f64> {
        let slope: Vec<f64> =
            a.loads.iter().enumerate().map(|(r, &f)| smoothed_slope(&self.s, self.base[r], self.cap[r], f)).collect();
        let n = cols.len();
        let mut h = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in p..n {
                let (cp, cq) = (&cols[p], &cols[q]);
                let mut v: f64 = cp.res.iter().filter(|r| cq.res.contains(r)).map(|&r| slope[r]).sum();
                if cp.commodity == cq.commodity {
                    let k = cp.commodity;
                    if cp.producer == cq.producer {
                        v += self.agents.cost(cp.producer, k).map_or(0.0, |g| g.curvature(a.y[cp.producer][k]));
                    }
                    if cp.consumer == cq.consumer {
                        v -= self.agents.revenue(cp.consumer, k).map_or(0.0, |f| f.curvature(a.x[cp.consumer][k]));
                    }
                }
                h[(p, q)] = v;
                h[(q, p)] = v;
            }
        }
        h
    }

    /// τ − t̄ on every resource.
    fn surcharges(&self, a: &Agg) -> Surcharges {
        let tau = self.arc_costs(a);
        let mut s = Surcharges::zero(self.net);
        let n_links = self.net.links().len();
        for (r, t) in tau.iter().enumerate() {
            let v = t - self.base[r];
            if r < n_links {
                s.links[r] = v;
            } else {
                s.stations[r - n_links] = v;
            }
        }
        s
    }

    /// Producer-consumer-commodity triples that can trade.
    fn triples(&self) -> Vec<(usize, usize, usize)> {
        let zero = Surcharges::zero(self.net);
        let mut out = Vec::new();
        for j in 0..self.net.producers().len() {
            for i in 0..self.net.consumers().len() {
                if min_cost_route(self.net, j, i, &zero).is_err() {
                    continue;
                }
                for k in 0..self.net.n_commodities() {
                    if self.agents.cost(j, k).is_some() && self.agents.revenue(i, k).is_some() {
                        out.push((j, i, k));
                    }
                }
            }
        }
        out
    }

    /// Cheapest route at the current smoothed costs and its reduced cost.
    fn price(&self, a: &Agg, sur: &Surcharges, j: usize, i: usize, k: usize) -> Option<(Route, f64)> {
        let route = min_cost_route(self.net, j, i, sur).ok()?;
        let cost = route_cost(self.net, &route, sur).ok()?;
        Some((route, cost + self.boundary(a, j, i, k)))
    }

    /// Largest commodity mass the producers can supply.
    fn mass(&self, k: usize) -> f64 {
        (0..self.net.producers().len()).filter_map(|j| self.agents.cost(j, k)).map(|g| g.cap).sum()
    }

    fn domain_error(&self, a: &Agg) -> PotentialError {
        for (r, &f) in a.loads.iter().enumerate() {
            if let Err(e) = smoothed_integral(&self.s, self.base[r], self.cap[r], f) {
                return e;
            }
        }
        for (j, row) in a.y.iter().enumerate() {
            for (k, &y) in row.iter().enumerate() {
                if let Some(g) = self.agents.cost(j, k) {
                    if !g.value(y).is_finite() {
                        return PotentialError::Domain { load: y, capacity: g.cap };
                    }
                }
            }
        }
        PotentialError::Parameter("state outside the potential's domain".into())
    }
}

fn check_state(state: &PathFlowState) -> Result<(), PotentialError> {
    if state.flows.len() != state.paths.len() || state.flows.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(PotentialError::Parameter("path flows must be finite, nonnegative and one per path".into()));
    }
    Ok(())
}

/// Ψ = Σ G − Σ F + Σ ∫ τ over link and station arcs.
pub fn potential_value(state: &PathFlowState, net: &Network, agents: &AgentSpec) -> Result<f64, PotentialError> {
    check_state(state)?;
    let m = Model::new(net, agents, state.smoothing)?;
    let cols = m.cols(&state.paths);
    let a = m.aggregate(&cols, &state.flows);
    let v = m.value(&a);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(m.domain_error(&a))
    }
}

/// ∂Ψ/∂x per path: smoothed route cost plus marginal production cost minus
/// marginal revenue.
pub fn potential_gradient(state: &PathFlowState, net: &Network, agents: &AgentSpec) -> Result<Vec<f64>, PotentialError> {
    check_state(state)?;
    let m = Model::new(net, agents, state.smoothing)?;
    let cols = m.cols(&state.paths);
    let a = m.aggregate(&cols, &state.flows);
    let g = m.costs(&cols, &a);
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(m.domain_error(&a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwOptions {
    pub max_iter: usize,
    /// Stop when the duality gap falls below tol·(1 + |Ψ|).
    pub tol: f64,
    /// Finish with projected Newton steps.
    pub polish: bool,
}

impl Default for FwOptions {
    fn default() -> Self {
        FwOptions { max_iter: 20_000, tol: 1e-9, polish: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwResult {
    pub state: PathFlowState,
    pub potential: f64,
    /// Smallest duality gap seen.
    pub gap: f64,
    pub potentials: Vec<f64>,
    pub gaps: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Frank–Wolfe with exact line search. Each commodity's mass is bounded by
/// total producer capacity; the linear step sends that mass down the
/// cheapest route or leaves it idle.
pub fn frank_wolfe(net: &Network, agents: &AgentSpec, smoothing: Smoothing, opts: &FwOptions) -> Result<FwResult, PotentialError> {
    frank_wolfe_from(net, agents, PathFlowState::new(smoothing), opts)
}

pub fn frank_wolfe_from(net: &Network, agents: &AgentSpec, start: PathFlowState, opts: &FwOptions) -> Result<FwResult, PotentialError> {
    check_state(&start)?;
    let m = Model::new(net, agents, start.smoothing)?;
    let triples = m.triples();
    let n_comm = net.n_commodities();
    let mass: Vec<f64> = (0..n_comm).map(|k| m.mass(k)).collect();
    let mut state = start;
    {
        let a = m.aggregate(&m.cols(&state.paths), &state.flows);
        if !m.value(&a).is_finite() {
            return Err(m.domain_error(&a));
        }
    }
    let mut potentials = Vec::new();
    let mut gaps = Vec::new();
    let mut best_gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let a = m.aggregate(&m.cols(&state.paths), &state.flows);
        let psi = m.value(&a);
        let sur = m.surcharges(&a);
        // Linear minimisation.
        let mut vertex: Vec<Option<usize>> = vec![None; n_comm];
        let mut best_rc = vec![0.0; n_comm];
        for &(j, i, k) in &triples {
            if let Some((route, rc)) = m.price(&a, &sur, j, i, k) {
                if rc < best_rc[k] {
                    best_rc[k] = rc;
                    vertex[k] = Some(state.add_path(route, k));
                }
            }
        }
        let cols = m.cols(&state.paths);
        let c = m.costs(&cols, &a);
        let mut s = vec![0.0; state.paths.len()];
        for k in 0..n_comm {
            if let Some(p) = vertex[k] {
                s[p] = mass[k];
            }
        }
        let d: Vec<f64> = s.iter().zip(&state.flows).map(|(s, x)| s - x).collect();
        let gap: f64 = -c.iter().zip(&d).map(|(c, d)| if *d == 0.0 { 0.0 } else { c * d }).sum::<f64>();
        potentials.push(psi);
        gaps.push(gap);
        best_gap = best_gap.min(gap);
        if gap <= opts.tol * (1.0 + psi.abs()) {
            converged = true;
            break;
        }
        let theta = line_search(&m, &cols, &state.flows, &d);
        for (x, dx) in state.flows.iter_mut().zip(&d) {
            *x = (*x + theta * dx).max(0.0);
        }
    }
    let a = m.aggregate(&m.cols(&state.paths), &state.flows);
    let mut result = FwResult { potential: m.value(&a), state, gap: best_gap, potentials, gaps, iterations, converged };
    if opts.polish {
        let sol = solve_smoothed_from(net, agents, result.state.clone(), &NewtonOptions::default())?;
        result.potential = sol.potential;
        result.state = sol.state;
        result.converged = result.converged || sol.converged;
    }
    Ok(result)
}

/// Exact minimisation of Ψ(x + θd) over the part of [0, 1] inside the domain.
fn line_search(m: &Model, cols: &[Col], x: &[f64], d: &[f64]) -> f64 {
    let a0 = m.aggregate(cols, x);
    // Directional change of every aggregate.
    let ad = m.aggregate(cols, d);
    let mut hi: f64 = 1.0;
    if m.s.family == CostFamily::Log {
        for (r, (&f, &df)) in a0.loads.iter().zip(&ad.loads).enumerate() {
            if let Capacity::Finite(cap) = m.cap[r] {
                if df > 0.0 {
                    hi = hi.min((cap - f) / df * (1.0 - 1e-9));
                }
            }
        }
    }
    for (j, row) in a0.y.iter().enumerate() {
        for (k, &y) in row.iter().enumerate() {
            if let Some(g) = m.agents.cost(j, k) {
                let dy = ad.y[j][k];
                if dy > 0.0 {
                    hi = hi.min((g.cap - y) / dy);
                }
            }
        }
    }
    let hi = hi.max(0.0);
    let slope = |t: f64| {
        let xt: Vec<f64> = x.iter().zip(d).map(|(x, d)| (x + t * d).max(0.0)).collect();
        let a = m.aggregate(cols, &xt);
        let v = m.costs(cols, &a).iter().zip(d).map(|(c, d)| if *d == 0.0 { 0.0 } else { c * d }).sum::<f64>();
        // Overflowed costs mean the step left the useful region.
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if slope(hi) <= 0.0 {
        return hi;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..100 {
        let mid = 0.5 * (lo + up);
        if slope(mid) > 0.0 {
            up = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Projected-gradient tolerance relative to the price scale.
    pub tol: f64,
    pub max_iter: usize,
    pub max_rounds: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 2_000, max_rounds: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSolution {
    pub state: PathFlowState,
    pub potential: f64,
    /// τ − t̄ per link and station.
    pub surcharges: Surcharges,
    /// Largest projected-gradient component, including unpriced routes.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimiser of the smoothed potential by projected Newton steps with route
/// generation. Steep families at small μ are reached by continuation.
pub fn solve_smoothed(net: &Network, agents: &AgentSpec, smoothing: Smoothing, opts: &NewtonOptions) -> Result<SmoothedSolution, PotentialError> {
    smoothing.validate()?;
    if !smoothing.stiff() {
        return solve_smoothed_from(net, agents, PathFlowState::new(smoothing), opts);
    }
    let mut state = PathFlowState::new(smoothing.with_mu(0.1));
    let mut mu = 0.1;
    loop {
        state.smoothing = smoothing.with_mu(mu);
        let sol = solve_smoothed_from(net, agents, state, opts)?;
        if mu <= smoothing.mu {
            return Ok(sol);
        }
        state = sol.state;
        mu = (mu * 0.5).max(smoothing.mu);
    }
}

pub fn solve_smoothed_from(net: &Network, agents: &AgentSpec, start: PathFlowState, opts: &NewtonOptions) -> Result<SmoothedSolution, PotentialError> {
    check_state(&start)?;
    let m = Model::new(net, agents, start.smoothing)?;
    let triples = m.triples();
    let mut state = start;
    let zero = Surcharges::zero(net);
    {
        let a = m.aggregate(&m.cols(&state.paths), &state.flows);
        if !m.value(&a).is_finite() {
            return Err(m.domain_error(&a));
        }
        for &(j, i, k) in &triples {
            if let Ok(r) = min_cost_route(net, j, i, &zero) {
                state.add_path(r, k);
            }
        }
    }
    let tol = opts.tol * m.price_scale;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_rounds {
        let cols = m.cols(&state.paths);
        let (x, its, _) = newton(&m, &cols, state.flows.clone(), tol, opts.max_iter);
        iterations += its;
        state.flows = x;
        let a = m.aggregate(&cols, &state.flows);
        let sur = m.surcharges(&a);
        let mut added = false;
        for &(j, i, k) in &triples {
            if let Some((route, rc)) = m.price(&a, &sur, j, i, k) {
                if rc < -tol {
                    let before = state.paths.len();
                    state.add_path(route, k);
                    added |= state.paths.len() > before;
                }
            }
        }
        if !added {
            converged = true;
            break;
        }
    }
    let cols = m.cols(&state.paths);
    let a = m.aggregate(&cols, &state.flows);
    let g = m.costs(&cols, &a);
    let mut residual = projected_gradient(&state.flows, &g);
    let sur = m.surcharges(&a);
    for &(j, i, k) in &triples {
        if let Some((_, rc)) = m.price(&a, &sur, j, i, k) {
            residual = residual.max(-rc);
        }
    }
    Ok(SmoothedSolution {
        potential: m.value(&a),
        surcharges: sur,
        converged: converged && residual <= tol * 10.0,
        residual,
        iterations,
        state,
    })
}

fn projected_gradient(x: &[f64], g: &[f64]) -> f64 {
    x.iter().zip(g).fold(0.0f64, |m, (&x, &g)| m.max((x - (x - g).max(0.0)).abs()))
}

/// Two-metric projected Newton on x ≥ 0 for a fixed set of columns.
fn newton(m: &Model, cols: &[Col], mut x: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let n = x.len();
    for it in 0..max_iter {
        let a = m.aggregate(cols, &x);
        let psi = m.value(&a);
        let g = m.costs(cols, &a);
        let res = projected_gradient(&x, &g);
        if res <= tol {
            return (x, it, true);
        }
        let eps = res.min(1e-8);
        let free: Vec<usize> = (0..n).filter(|&p| !(x[p] <= eps && g[p] > 0.0)).collect();
        let h = m.hessian(cols, &a);
        let mut d = vec![0.0; n];
        for p in 0..n {
            if !free.contains(&p) {
                d[p] = -x[p];
            }
        }
        let nf = free.len();
        let mut newton_ok = false;
        if nf > 0 {
            let diag_max = free.iter().map(|&p| h[(p, p)].abs()).fold(0.0, f64::max);
            let reg = 1e-12 * (1.0 + diag_max);
            let hf = DMatrix::from_fn(nf, nf, |r, c| h[(free[r], free[c])] + if r == c { reg } else { 0.0 });
            let rhs = DVector::from_iterator(nf, free.iter().map(|&p| -g[p]));
            let step = hf.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| hf.lu().solve(&rhs));
            if let Some(step) = step {
                if step.iter().all(|v| v.is_finite()) && free.iter().zip(step.iter()).map(|(&p, s)| g[p] * s).sum::<f64>() < 0.0 {
                    for (r, &p) in free.iter().enumerate() {
                        d[p] = step[r];
                    }
                    newton_ok = true;
                }
            }
            if !newton_ok {
                let scale = 1.0 / (1.0 + diag_max);
                for &p in &free {
                    d[p] = -g[p] * scale;
                }
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(x, d)| (x + alpha * d).max(0.0)).collect();
            let an = m.aggregate(cols, &xn);
            let pn = m.value(&an);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
            if pn.is_finite() && pn <= psi + 1e-4 * decrease + 1e-15 * (1.0 + psi.abs()) {
                x = xn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return (x, it, false);
        }
    }
    (x, max_iter, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub mu: f64,
    pub surcharges: Surcharges,
    pub potential: f64,
    pub total_flow: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub steps: Vec<ContinuationStep>,
    /// Estimates at the last μ.
    pub surcharges: Surcharges,
    pub state: PathFlowState,
}

/// 0.1, 0.05, … down to 1e-5.
pub fn default_schedule() -> Vec<f64> {
    let mut out = Vec::new();
    let mut mu = 0.1;
    while mu > 1e-5 {
        out.push(mu);
        mu *= 0.5;
    }
    out.push(1e-5);
    out
}

/// Solves the smoothed problem along a decreasing μ schedule, warm-starting
/// each step, and returns τ − t̄ at the last step as the surcharge estimate.
pub fn recover_multipliers(
    net: &Network,
    agents: &AgentSpec,
    family: CostFamily,
    gamma: f64,
    schedule: &[f64],
    opts: &NewtonOptions,
) -> Result<Continuation, PotentialError> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(PotentialError::Parameter("μ schedule must be nonempty and strictly decreasing".into()));
    }
    if *schedule.last().unwrap() > 1e-5 {
        return Err(PotentialError::Parameter(format!("μ schedule must end at or below 1e-5, ends at {}", schedule.last().unwrap())));
    }
    let mut state = PathFlowState::new(Smoothing::new(family, schedule[0], gamma)?);
    let mut steps = Vec::new();
    let mut last = None;
    for &mu in schedule {
        state.smoothing = Smoothing::new(family, mu, gamma)?;
        let sol = match solve_smoothed_from(net, agents, state.clone(), opts) {
            Ok(s) => s,
            Err(PotentialError::Domain { .. }) | Err(PotentialError::Parameter(_)) => {
                let trace = steps.iter().map(|s: &ContinuationStep| (s.mu, s.residual)).collect();
                return Err(PotentialError::Continuation { mu, residual: f64::NAN, trace });
            }
            Err(e) => return Err(e),
        };
        steps.push(ContinuationStep {
            mu,
            surcharges: sol.surcharges.clone(),
            potential: sol.potential,
            total_flow: sol.state.total_flow(),
            residual: sol.residual,
        });
        if !sol.converged {
            let trace = steps.iter().map(|s| (s.mu, s.residual)).collect();
            return Err(PotentialError::Continuation { mu, residual: sol.residual, trace });
        }
        state = sol.state.clone();
        last = Some(sol);
    }
    let sol = last.unwrap();
    Ok(Continuation { steps, surcharges: sol.surcharges, state: sol.state })
}

/// A share carrier: a route for one commodity, or the idle option of a
/// commodity (mass that is not shipped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareOption {
    Path(usize),
    Idle(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedState {
    /// Physical flows: mass × path shares.
    pub state: PathFlowState,
    pub options: Vec<ShareOption>,
    pub shares: Vec<f64>,
    pub mass: f64,
    pub eta: f64,
    /// Ψ(mass·s)/mass + η Σ s ln s.
    pub objective: f64,
    /// ‖s − softmax(−c/η)‖∞.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyOptions {
    /// Total mass behind the shares; defaults to total producer capacity.
    pub mass: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        EntropyOptions { mass: None, tol: 1e-11, max_iter: 500 }
    }
}

/// Route options for the share problems: every simple route of every
/// trading triple, then one idle option per traded commodity.
struct ShareModel<'a> {
    m: Model<'a>,
    cols: Vec<Col>,
    paths: Vec<PathVar>,
    options: Vec<ShareOption>,
    mass: f64,
}

impl<'a> ShareModel<'a> {
    fn new(net: &'a Network, agents: &'a AgentSpec, smoothing: Smoothing, mass: Option<f64>) -> Result<Self, PotentialError> {
        let m = Model::new(net, agents, smoothing)?;
        let mut paths = Vec::new();
        let mut traded = vec![false; net.n_commodities()];
        for (j, i, k) in m.triples() {
            for route in enumerate_routes(net, j, i)? {
                paths.push(PathVar { route, commodity: k });
            }
            traded[k] = true;
        }
        let mut options: Vec<ShareOption> = (0..paths.len()).map(ShareOption::Path).collect();
        options.extend(traded.iter().enumerate().filter(|(_, t)| **t).map(|(k, _)| ShareOption::Idle(k)));
        let mass = match mass {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => return Err(PotentialError::Parameter(format!("mass must be positive, got {v}"))),
            None => (0..net.n_commodities()).filter(|&k| traded[k]).map(|k| m.mass(k)).sum(),
        };
        if paths.is_empty() {
            return Err(PotentialError::Parameter("no producer can reach a consumer".into()));
        }
        let cols = m.cols(&paths);
        Ok(ShareModel { m, cols, paths, options, mass })
    }

    fn flows(&self, s: &[f64]) -> Vec<f64> {
        s[..self.paths.len()].iter().map(|v| v * self.mass).collect()
    }

    /// Option costs c(mass·s); idle options cost nothing.
    fn costs(&self, s: &[f64]) -> (Vec<f64>, Agg) {
        let a = self.m.aggregate(&self.cols, &self.flows(s));
        let mut c = self.m.costs(&self.cols, &a);
        c.resize(self.options.len(), 0.0);
        (c, a)
    }

    fn objective(&self, s: &[f64], eta: f64) -> f64 {
        let a = self.m.aggregate(&self.cols, &self.flows(s));
        let ent: f64 = s.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
        self.m.value(&a) / self.mass + eta * ent
    }

    fn gibbs(&self, c: &[f64], eta: f64) -> Vec<f64> {
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = c.iter().map(|v| (-(v - lo) / eta).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }

    fn into_state(self, s: Vec<f64>, eta: f64, iterations: usize) -> RegularizedState {
        let (c, _) = self.costs(&s);
        let g = self.gibbs(&c, eta);
        let kkt = s.iter().zip(&g).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let objective = self.objective(&s, eta);
        let state = PathFlowState { smoothing: self.m.s, flows: self.flows(&s), paths: self.paths };
        RegularizedState { state, options: self.options, shares: s, mass: self.mass, eta, objective, kkt_residual: kkt, iterations }
    }
}

/// Minimiser of Ψ(M s)/M + η Σ s ln s over the share simplex, by Newton's
/// method on the optimality system in log-shares, continued from η = 1 when
/// η is small.
pub fn entropy_solve(net: &Network, agents: &AgentSpec, eta: f64, smoothing: Smoothing, opts: &EntropyOptions) -> Result<RegularizedState, PotentialError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(PotentialError::Parameter(format!("eta must be positive, got {eta}")));
    }
    let sm = ShareModel::new(net, agents, smoothing, opts.mass)?;
    let n = sm.options.len();
    let mut y = vec![-(n as f64).ln(); n];
    let mut schedule = Vec::new();
    if eta < 1e-2 {
        let mut e = 1.0;
        while e > eta * 1.0001 {
            schedule.push(e);
            e *= 0.1;
        }
    }
    schedule.push(eta);
    let mut iterations = 0;
    for &e in &schedule {
        let (yn, its) = entropy_newton(&sm, y, e, opts)?;
        y = yn;
        iterations += its;
    }
    let s: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    Ok(sm.into_state(s, eta, iterations))
}

fn entropy_newton(sm: &ShareModel, mut y: Vec<f64>, eta: f64, opts: &EntropyOptions) -> Result<(Vec<f64>, usize), PotentialError> {
    let n = y.len();
    let np = sm.paths.len();
    let residual = |y: &[f64]| -> Option<(Vec<f64>, Agg, f64)> {
        let s: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let (c, a) = sm.costs(&s);
        if c.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // ν eliminated by its least-squares value.
        let nu = c.iter().zip(y).map(|(c, y)| c + eta * y).sum::<f64>() / n as f64;
        let mut r: Vec<f64> = c.iter().zip(y).map(|(c, y)| c + eta * y - nu).collect();
        r.push(s.iter().sum::<f64>() - 1.0);
        Some((r, a, nu))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = opts.tol * sm.m.price_scale;
    let Some((mut r, mut a, mut nu)) = residual(&y) else {
        return Err(PotentialError::Parameter("uniform shares fall outside the potential's domain; lower the mass".into()));
    };
    for it in 0..opts.max_iter {
        if norm(&r) <= tol {
            return Ok((y, it));
        }
        let s: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let h = sm.m.hessian(&sm.cols, &a);
        let mut jac = DMatrix::<f64>::zeros(n + 1, n + 1);
        for p in 0..n {
            for q in 0..n {
                if p < np && q < np {
                    jac[(p, q)] = sm.mass * h[(p, q)] * s[q];
                }
            }
            jac[(p, p)] += eta;
            jac[(p, n)] = -1.0;
            jac[(n, p)] = s[p];
        }
        // Residual rows with ν as an unknown.
        let mut rhs = DVector::zeros(n + 1);
        let (c, _) = sm.costs(&s);
        for p in 0..n {
            rhs[p] = -(c[p] + eta * y[p] - nu);
        }
        rhs[n] = -r[n];
        let Some(step) = jac.lu().solve(&rhs) else { break };
        let merit = norm(&r);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let yn: Vec<f64> = y.iter().enumerate().map(|(p, v)| v + alpha * step[p]).collect();
            if let Some((rn, an, nun)) = residual(&yn) {
                if norm(&rn) < merit * (1.0 - 1e-4 * alpha) || norm(&rn) <= tol {
                    y = yn;
                    r = rn;
                    a = an;
                    nu = nun;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if norm(&r) <= tol * 1e3 {
        Ok((y, opts.max_iter))
    } else {
        Err(PotentialError::Continuation { mu: eta, residual: norm(&r), trace: vec![(eta, norm(&r))] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    pub steps: usize,
    /// Population size; reported counts are population × shares.
    pub population: u64,
    pub mass: Option<f64>,
    /// Random initial shares when set, uniform otherwise.
    pub seed: Option<u64>,
    /// Record every n-th step in the trajectory.
    pub record_every: usize,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions { steps: 10_000, population: 1000, mass: None, seed: None, record_every: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitStep {
    pub step: usize,
    pub objective: f64,
    pub step_size: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTrajectory {
    pub trajectory: Vec<LogitStep>,
    pub terminal: RegularizedState,
    pub expected_counts: Vec<f64>,
}

/// Mean-field logit dynamics: shares move a step α toward the Gibbs
/// distribution of current option costs. α is the largest of 1, ½, ¼, …
/// (starting from twice the previous step) that gives sufficient decrease of
/// Ψ(M s)/M + η Σ s ln s, so that objective never rises.
pub fn logit_dynamics(net: &Network, agents: &AgentSpec, eta: f64, smoothing: Smoothing, opts: &LogitOptions) -> Result<LogitTrajectory, PotentialError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(PotentialError::Parameter(format!("eta must be positive, got {eta}")));
    }
    if opts.population == 0 {
        return Err(PotentialError::Parameter("population must be at least 1".into()));
    }
    let sm = ShareModel::new(net, agents, smoothing, opts.mass)?;
    let n = sm.options.len();
    let mut s = match opts.seed {
        None => vec![1.0 / n as f64; n],
        Some(seed) => {
            let mut rng = StdRng::seed_from_u64(seed);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|v| v / z).collect()
        }
    };
    let every = opts.record_every.max(1);
    let mut trajectory = Vec::new();
    let mut last_alpha: f64 = 0.5;
    for step in 0..opts.steps {
        let (c, a) = sm.costs(&s);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(sm.m.domain_error(&a));
        }
        let g = sm.gibbs(&c, eta);
        // Along g − s the slope of the objective is −η times the symmetrised
        // divergence between g and s; backtrack until it decreases enough.
        let slope: f64 = -eta * s.iter().zip(&g).map(|(si, gi)| (gi - si) * (gi.max(f64::MIN_POSITIVE).ln() - si.max(f64::MIN_POSITIVE).ln())).sum::<f64>();
        let f0 = sm.objective(&s, eta);
        let mut alpha = (2.0 * last_alpha).min(1.0);
        let mut next: Vec<f64>;
        loop {
            next = s.iter().zip(&g).map(|(si, gi)| (1.0 - alpha) * si + alpha * gi).collect();
            let f1 = sm.objective(&next, eta);
            if f1 <= f0 + 1e-4 * alpha * slope + 1e-14 * f0.abs().max(1.0) || alpha < 1e-12 {
                break;
            }
            alpha *= 0.5;
        }
        last_alpha = alpha;
        let change = s.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        s = next;
        if step % every == 0 || step + 1 == opts.steps {
            trajectory.push(LogitStep { step, objective: sm.objective(&s, eta), step_size: alpha, max_change: change });
        }
    }
    let expected_counts = s.iter().map(|v| v * opts.population as f64).collect();
    let terminal = sm.into_state(s, eta, opts.steps);
    Ok(LogitTrajectory { trajectory, terminal, expected_counts })
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

    #[test]
    fn cost_families_at_reference_points() {
        let p = Smoothing::new(CostFamily::Power, 0.5, 1.0).unwrap();
        assert!((smoothed_cost(&p, 1.0, Capacity::Finite(4.0), 1.0).unwrap() - 1.5).abs() < 1e-15);
        for fam in [CostFamily::Power, CostFamily::Log, CostFamily::SteepPower] {
            let s = Smoothing::new(fam, 0.3, 1.0).unwrap();
            assert_eq!(smoothed_cost(&s, 3.0, Capacity::Finite(5.0), 0.0).unwrap(), 3.0);
        }
        let l = Smoothing::new(CostFamily::Log, 0.1, 1.0).unwrap();
        assert!(matches!(smoothed_cost(&l, 1.0, Capacity::Finite(2.0), 2.0), Err(PotentialError::Domain { .. })));
    }

    #[test]
    fn integrals_match_quadrature() {
        for fam in [CostFamily::Power, CostFamily::Log, CostFamily::SteepPower] {
            let s = Smoothing::new(fam, 0.4, 1.5).unwrap();
            let (cap, load) = (Capacity::Finite(3.0), 2.4);
            let n = 20_000;
            let h = load / n as f64;
            let quad: f64 = (0..n).map(|k| smoothed_cost(&s, 2.0, cap, (k as f64 + 0.5) * h).unwrap() * h).sum();
            let exact = smoothed_integral(&s, 2.0, cap, load).unwrap();
            assert!((quad - exact).abs() < 1e-6, "{fam:?}: {quad} vs {exact}");
        }
    }

    #[test]
    fn desk_potential_at_competitive_flow() {
        let (net, agents) = q1(Capacity::Unlimited);
        let mut st = PathFlowState::new(Smoothing::new(CostFamily::SteepPower, 1e-3, 1.0).unwrap());
        let route = min_cost_route(&net, 0, 0, &Surcharges::zero(&net)).unwrap();
        st.add_path(route, 0);
        assert_eq!(potential_value(&st, &net, &agents).unwrap(), 0.0);
        st.flows[0] = 4.0;
        assert!((potential_value(&st, &net, &agents).unwrap() + 32.0).abs() < 1e-12);
    }

    #[test]
    fn frank_wolfe_finds_competitive_flow() {
        let (net, agents) = q1(Capacity::Unlimited);
        let s = Smoothing::new(CostFamily::SteepPower, 1e-3, 1.0).unwrap();
        let r = frank_wolfe(&net, &agents, s, &FwOptions::default()).unwrap();
        assert!((r.state.total_flow() - 4.0).abs() < 1e-2, "{}", r.state.total_flow());
    }

    #[test]
    fn continuation_recovers_link_surcharge() {
        let (net, agents) = q1(Capacity::Finite(2.0));
        let c = recover_multipliers(&net, &agents, CostFamily::SteepPower, 1.0, &default_schedule(), &NewtonOptions::default()).unwrap();
        assert!((c.surcharges.links[0] - 8.0).abs() < 1e-3, "{:?}", c.surcharges);
        assert!((c.state.total_flow() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_base_tariff_on_capacitated_arc_is_rejected() {
        let mut b = NetworkBuilder::new();
        let s = b.station("S", 0.0, Capacity::Finite(3.0));
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
        let s = Smoothing::new(CostFamily::SteepPower, 0.1, 1.0).unwrap();
        assert!(matches!(solve_smoothed(&net, &agents, s, &NewtonOptions::default()), Err(PotentialError::ZeroBaseTariff(_))));
    }

    #[test]
    fn entropy_and_logit_agree() {
        let (net, agents) = q1(Capacity::Unlimited);
        let s = Smoothing::new(CostFamily::SteepPower, 0.1, 1.0).unwrap();
        let e = entropy_solve(&net, &agents, 0.1, s, &EntropyOptions::default()).unwrap();
        assert!(e.kkt_residual < 1e-9, "{}", e.kkt_residual);
        let l = logit_dynamics(&net, &agents, 0.1, s, &LogitOptions::default()).unwrap();
        let dev = l.terminal.shares.iter().zip(&e.shares).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 1e-3, "{dev}");
    }
}
