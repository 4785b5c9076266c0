//! Tariff setting under market power: the welfare function Λ, monopoly,
//! Cournot and Stackelberg carriers on a single quadratic market, tariff
//! sweeps on general networks, and a two-tariff carrier with rule-based
//! client segments.

use crate::agents::{AgentSpec, QuadraticConsumer, QuadraticProducer, Revenue};
use crate::equilibrium::{solve_perfect, SolverSettings, Tariffs};
use crate::error::MarketError;
use crate::network::{Capacity, Network, NetworkBuilder};
use serde::{Deserialize, Serialize};

/// One consumer, one producer and a carrier with unit cost `base_cost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMarket {
    pub consumer: QuadraticConsumer,
    pub producer: QuadraticProducer,
    pub base_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Structure {
    Competitive,
    Monopoly,
    Cournot { carriers: u64 },
    Stackelberg,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub structure: Structure,
    pub tariff: f64,
    pub flow: f64,
    pub competitive_flow: f64,
    /// Carrier profit above base cost, (c − c̃)·z.
    pub intermediary_profit: f64,
    /// Λ(c̃) − Λ(c).
    pub welfare_loss: f64,
    pub theta: f64,
}

impl QuadraticMarket {
    pub fn new(consumer: QuadraticConsumer, producer: QuadraticProducer, base_cost: f64) -> Result<Self, MarketError> {
        consumer.validate("consumer").map_err(|e| MarketError::Precondition(e.to_string()))?;
        producer.validate("producer").map_err(|e| MarketError::Precondition(e.to_string()))?;
        if !(base_cost > 0.0 && base_cost.is_finite()) {
            return Err(MarketError::Precondition(format!("base cost must be positive, got {base_cost}")));
        }
        Ok(QuadraticMarket { consumer, producer, base_cost })
    }

    /// b = 20, a = −1, X̂ = 10; B = 2, A = 1, Ŷ = 10; c̃ = 2.
    pub fn desk() -> Self {
        QuadraticMarket {
            consumer: QuadraticConsumer { b: 20.0, a: -1.0, cap: 10.0 },
            producer: QuadraticProducer { b: 2.0, a: 1.0, cap: 10.0 },
            base_cost: 2.0,
        }
    }

    /// A − a.
    pub fn curvature(&self) -> f64 {
        self.producer.a - self.consumer.a
    }

    /// b − B − c̃.
    pub fn margin(&self) -> f64 {
        self.consumer.b - self.producer.b - self.base_cost
    }

    fn max_flow(&self) -> f64 {
        self.consumer.cap.min(self.producer.cap)
    }

    /// Competitive flow at tariff `c`.
    pub fn flow(&self, c: f64) -> f64 {
        ((self.consumer.b - c - self.producer.b) / (2.0 * self.curvature())).clamp(0.0, self.max_flow())
    }

    /// Welfare max_z F(z) − G(z) − c·z at tariff `c`.
    pub fn lambda(&self, c: f64) -> f64 {
        let z = self.flow(c);
        let (f, g) = (self.consumer, self.producer);
        f.b * z + f.a * z * z - g.b * z - g.a * z * z - c * z
    }

    /// Outcome of charging `c` in place of the base cost.
    pub fn outcome(&self, c: f64, structure: Structure) -> MarketOutcome {
        let flow = self.flow(c);
        let phi = (c - self.base_cost) * flow;
        let loss = self.lambda(self.base_cost) - self.lambda(c);
        MarketOutcome {
            structure,
            tariff: c,
            flow,
            competitive_flow: self.flow(self.base_cost),
            intermediary_profit: phi,
            welfare_loss: loss,
            theta: if loss > 0.0 { phi / loss } else { 1.0 },
        }
    }

    /// Checks 0 < b − B − c̃ < 4(A − a)·min(X̂, Ŷ).
    pub fn check_unsaturated(&self) -> Result<(), MarketError> {
        let d = self.margin();
        let bound = 4.0 * self.curvature() * self.max_flow();
        if d <= 0.0 {
            return Err(MarketError::Precondition(format!("b - B - c~ = {d} must be positive")));
        }
        if d >= bound {
            return Err(MarketError::Precondition(format!("b - B - c~ = {d} must be below 4(A - a) min(X^, Y^) = {bound}")));
        }
        Ok(())
    }

    /// Single-link network and agents realising this market.
    pub fn network(&self) -> (Network, AgentSpec) {
        let mut nb = NetworkBuilder::new();
        let s = nb.station("origin", 0.0, Capacity::Unlimited);
        let t = nb.station("destination", 0.0, Capacity::Unlimited);
        nb.link(s, t, self.base_cost, Capacity::Unlimited);
        nb.producer("producer", s);
        nb.consumer("consumer", t);
        nb.commodity("goods");
        let net = nb.build().expect("two-station network is valid");
        let agents = AgentSpec::single(&net, self.consumer, self.producer).expect("validated agents");
        (net, agents)
    }
}

/// Λ at the given tariffs: the competitive welfare optimum, checked against
/// the dual value.
pub fn lambda_of(net: &Network, agents: &AgentSpec, tariffs: &Tariffs, settings: &SolverSettings) -> Result<f64, MarketError> {
    let sol = solve_perfect(net, agents, tariffs, settings)?;
    Ok(sol.primal_value)
}

pub fn monopoly_optimum(m: &QuadraticMarket) -> Result<MarketOutcome, MarketError> {
    m.check_unsaturated()?;
    let c = (m.consumer.b - m.producer.b + m.base_cost) / 2.0;
    Ok(m.outcome(c, Structure::Monopoly))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CournotOutcome {
    pub outcome: MarketOutcome,
    pub carriers: u64,
    pub hhi: f64,
    /// 10000 / (10000 + HHI): flow relative to the competitive flow.
    pub throughput_factor: f64,
    /// 20000 / (20000 + HHI).
    pub theta_factor: f64,
}

/// Symmetric Cournot equilibrium of `n` carriers on the inverse transport
/// demand c(z) = b − B − 2(A − a)z.
pub fn cournot_equilibrium(m: &QuadraticMarket, n: u64) -> Result<CournotOutcome, MarketError> {
    if n == 0 {
        return Err(MarketError::Precondition("at least one carrier is required".into()));
    }
    m.check_unsaturated()?;
    let nf = n as f64;
    let k = m.curvature();
    let z = nf / (2.0 * (nf + 1.0)) * m.margin() / k;
    let c = m.consumer.b - m.producer.b - 2.0 * k * z;
    let mut outcome = m.outcome(c, Structure::Cournot { carriers: n });
    // Exact total from the Cournot formula, independent of flow clamping.
    outcome.flow = z;
    let hhi = 10000.0 / nf;
    Ok(CournotOutcome {
        outcome,
        carriers: n,
        hhi,
        throughput_factor: 10000.0 / (10000.0 + hhi),
        theta_factor: 20000.0 / (20000.0 + hhi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseTrace {
    pub quantities: Vec<f64>,
    pub total: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped simultaneous best-response iteration from zero output, used as an
/// independent check of the Cournot formula. Undamped simultaneous updates
/// oscillate for three or more carriers; damping by 1/(n + 1) contracts.
pub fn cournot_best_response(m: &QuadraticMarket, n: usize, tol: f64, max_iter: usize) -> BestResponseTrace {
    let k = m.curvature();
    let d = m.margin();
    let omega = 1.0 / (n as f64 + 1.0);
    let mut q = vec![0.0; n];
    for it in 1..=max_iter {
        let total: f64 = q.iter().sum();
        let next: Vec<f64> = q
            .iter()
            .map(|&qi| {
                let others = total - qi;
                let br = ((d - 2.0 * k * others) / (4.0 * k)).max(0.0);
                (1.0 - omega) * qi + omega * br
            })
            .collect();
        let step = next.iter().zip(&q).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
        q = next;
        if step <= tol {
            return BestResponseTrace { total: q.iter().sum(), quantities: q, iterations: it, converged: true };
        }
    }
    BestResponseTrace { total: q.iter().sum(), quantities: q, iterations: max_iter, converged: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackelbergOutcome {
    /// Carrier tariff (b + B + c̃)/2 from the stated transport demand.
    pub tariff: f64,
    /// Transport demand h at that tariff.
    pub flow: f64,
    pub producer_price: f64,
    pub monopoly_tariff: f64,
    pub exceeds_monopoly: bool,
    /// Tariff and flow when the producer's pricing problem is solved
    /// directly instead of through the stated demand map.
    pub direct_tariff: f64,
    pub direct_flow: f64,
}

/// Producer price set by a producer facing consumer demand at delivered
/// price p̂ + c: ((b − c)(A − a) + aB)/(A − 2a).
pub fn stackelberg_producer_price(m: &QuadraticMarket, c: f64) -> f64 {
    let (f, g) = (m.consumer, m.producer);
    ((f.b - c) * (g.a - f.a) + f.a * g.b) / (g.a - 2.0 * f.a)
}

/// Transport demand h(c) = min(X̂, (b + B − c)₊ / (2(A − 2a))).
pub fn stackelberg_demand(m: &QuadraticMarket, c: f64) -> f64 {
    let (f, g) = (m.consumer, m.producer);
    ((f.b + g.b - c).max(0.0) / (2.0 * (g.a - 2.0 * f.a))).min(f.cap)
}

/// Consumer order at delivered price `p`.
pub fn consumer_order(m: &QuadraticMarket, p: f64) -> f64 {
    m.consumer.demand(p)
}

/// Producer's optimal sale against consumer demand. In quantity terms the
/// producer earns (b − c + 2az)z − G(z) on [0, min(X̂, Ŷ)], a concave quadratic.
fn direct_producer_flow(m: &QuadraticMarket, c: f64) -> f64 {
    let (f, g) = (m.consumer, m.producer);
    ((f.b - c - g.b) / (2.0 * (g.a - 2.0 * f.a))).clamp(0.0, f.cap.min(g.cap))
}

pub fn stackelberg_chain(m: &QuadraticMarket) -> Result<StackelbergOutcome, MarketError> {
    m.check_unsaturated()?;
    let (f, g) = (m.consumer, m.producer);
    let bound = 4.0 * f.cap * (g.a - 2.0 * f.a);
    if f.b + g.b - m.base_cost > bound {
        return Err(MarketError::Precondition(format!("b + B - c~ = {} must not exceed 4 X^ (A - 2a) = {bound}", f.b + g.b - m.base_cost)));
    }
    let tariff = (f.b + g.b + m.base_cost) / 2.0;
    let monopoly_tariff = (f.b - g.b + m.base_cost) / 2.0;
    let hi = f.b + g.b;
    let (direct_tariff, _) = grid_search(|c| (c - m.base_cost) * direct_producer_flow(m, c), m.base_cost, hi, 4001)?;
    let (direct_tariff, _) = refine_max(|c| (c - m.base_cost) * direct_producer_flow(m, c), direct_tariff, (hi - m.base_cost) / 4000.0);
    Ok(StackelbergOutcome {
        tariff,
        flow: stackelberg_demand(m, tariff),
        producer_price: stackelberg_producer_price(m, tariff),
        monopoly_tariff,
        exceeds_monopoly: tariff > monopoly_tariff,
        direct_tariff,
        direct_flow: direct_producer_flow(m, direct_tariff),
    })
}

/// Maximiser of `f` on an evenly spaced grid; the lowest point wins ties.
pub fn grid_search(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Result<(f64, f64), MarketError> {
    if points == 0 || !(hi >= lo) {
        return Err(MarketError::EmptyGrid);
    }
    let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
    let mut best = (lo, f64::NEG_INFINITY);
    for s in 0..points {
        let c = lo + step * s as f64;
        let v = f(c);
        if v > best.1 {
            best = (c, v);
        }
    }
    Ok(best)
}

/// Golden-section refinement of a unimodal maximum within ±`radius`.
pub fn refine_max(f: impl Fn(f64) -> f64, centre: f64, radius: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (centre - radius, centre + radius);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) >= f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub markup: f64,
    pub flow: f64,
    pub intermediary_profit: f64,
    pub welfare_loss: f64,
    pub theta: f64,
}

/// Uniform markups over base tariffs on a general network, each evaluated by
/// the equilibrium solver.
pub fn markup_sweep(
    net: &Network,
    agents: &AgentSpec,
    base: &Tariffs,
    markups: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<SweepPoint>, MarketError> {
    if markups.is_empty() {
        return Err(MarketError::EmptyGrid);
    }
    let lambda0 = lambda_of(net, agents, base, settings)?;
    markups
        .iter()
        .map(|&m| {
            let sol = solve_perfect(net, agents, &base.shifted(m), settings)?;
            let flow = sol.total_flow();
            let phi = m * flow;
            let loss = lambda0 - sol.primal_value;
            Ok(SweepPoint { markup: m, flow, intermediary_profit: phi, welfare_loss: loss, theta: if loss > 0.0 { phi / loss } else { 1.0 } })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Lt,
    Le,
    Ge,
    Gt,
}

/// `coefficients · c  relation  bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub bound: f64,
}

impl Condition {
    pub fn holds(&self, c: &[f64]) -> bool {
        let lhs: f64 = self.coefficients.iter().zip(c).map(|(a, x)| a * x).sum();
        match self.relation {
            Relation::Lt => lhs < self.bound,
            Relation::Le => lhs <= self.bound,
            Relation::Ge => lhs >= self.bound,
            Relation::Gt => lhs > self.bound,
        }
    }
}

/// Ship with `service` when every condition holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOption {
    pub service: usize,
    pub conditions: Vec<Condition>,
}

/// A client group; the first option whose conditions hold is taken,
/// otherwise the group uses an outside carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub wagons: f64,
    pub options: Vec<ServiceOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthInstance {
    pub segments: Vec<Segment>,
    /// Carrier cost per wagon of each service.
    pub costs: Vec<f64>,
}

fn cond(coefficients: [f64; 2], relation: Relation, bound: f64) -> Condition {
    Condition { coefficients: coefficients.to_vec(), relation, bound }
}

impl EdgeworthInstance {
    /// Four client groups choosing between two wagon types.
    pub fn two_wagon_types(costs: [f64; 2]) -> Self {
        use Relation::*;
        let seg = |name: &str, wagons: f64, options: Vec<ServiceOption>| Segment { name: name.into(), wagons, options };
        EdgeworthInstance {
            segments: vec![
                seg(
                    "flexible",
                    450.0,
                    vec![
                        ServiceOption { service: 0, conditions: vec![cond([1.0, -1.0], Lt, 5.0), cond([1.0, 0.0], Le, 22.0)] },
                        ServiceOption { service: 1, conditions: vec![cond([1.0, -1.0], Ge, 5.0), cond([0.0, 1.0], Le, 17.0)] },
                    ],
                ),
                seg("type-1 only", 40.0, vec![ServiceOption { service: 0, conditions: vec![cond([1.0, 0.0], Le, 21.0)] }]),
                seg("type-2 bulk", 900.0, vec![ServiceOption { service: 1, conditions: vec![cond([0.0, 1.0], Le, 18.0)] }]),
                seg("type-2 marginal", 200.0, vec![ServiceOption { service: 1, conditions: vec![cond([0.0, 1.0], Le, 16.0)] }]),
            ],
            costs: costs.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let n = self.costs.len();
        for s in &self.segments {
            if !(s.wagons > 0.0 && s.wagons.is_finite()) {
                return Err(MarketError::Precondition(format!("segment {} needs a positive wagon count", s.name)));
            }
            for o in &s.options {
                if o.service >= n {
                    return Err(MarketError::Precondition(format!("segment {} names service {} of {n}", s.name, o.service)));
                }
                for c in &o.conditions {
                    if c.coefficients.len() != n || !c.bound.is_finite() || c.coefficients.iter().any(|x| !x.is_finite()) {
                        return Err(MarketError::Precondition(format!("segment {} has a malformed condition", s.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Service chosen by each segment at tariffs `c`.
    pub fn choices(&self, c: &[f64]) -> Vec<Option<usize>> {
        self.segments
            .iter()
            .map(|s| s.options.iter().find(|o| o.conditions.iter().all(|k| k.holds(c))).map(|o| o.service))
            .collect()
    }

    pub fn profit(&self, c: &[f64]) -> f64 {
        self.segments
            .iter()
            .zip(self.choices(c))
            .filter_map(|(s, ch)| ch.map(|k| s.wagons * (c[k] - self.costs[k])))
            .sum()
    }

    /// Integer tariffs from 0 to one above the largest bound, per service.
    pub fn integer_grid(&self) -> Vec<Vec<f64>> {
        let top = self
            .segments
            .iter()
            .flat_map(|s| s.options.iter().flat_map(|o| o.conditions.iter().map(|c| c.bound.abs())))
            .chain(self.costs.iter().copied())
            .fold(0.0f64, f64::max)
            .ceil() as i64
            + 1;
        vec![(0..=top).map(|v| v as f64).collect(); self.costs.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthResult {
    pub tariffs: Vec<f64>,
    pub profit: f64,
    pub choices: Vec<Option<usize>>,
}

/// Exhaustive search over the product grid; ties go to the lexicographically
/// smallest tariff vector.
pub fn edgeworth_search(inst: &EdgeworthInstance, grid: &[Vec<f64>]) -> Result<EdgeworthResult, MarketError> {
    inst.validate()?;
    if grid.len() != inst.costs.len() || grid.iter().any(|g| g.is_empty()) {
        return Err(MarketError::EmptyGrid);
    }
    let mut axes: Vec<Vec<f64>> = grid.to_vec();
    for a in &mut axes {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        a.dedup();
    }
    let mut idx = vec![0usize; axes.len()];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let c: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        let p = inst.profit(&c);
        if best.as_ref().map_or(true, |b| p > b.1) {
            best = Some((c, p));
        }
        // Odometer with the last axis fastest, so earlier axes dominate ties.
        let mut d = axes.len();
        loop {
            if d == 0 {
                let (tariffs, profit) = best.unwrap();
                let choices = inst.choices(&tariffs);
                return Ok(EdgeworthResult { tariffs, profit, choices });
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_monopoly() {
        let m = QuadraticMarket::desk();
        let o = monopoly_optimum(&m).unwrap();
        assert_eq!(o.tariff, 10.0);
        assert!((o.flow - 2.0).abs() < 1e-12);
        assert!((o.theta - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn duopoly() {
        let c = cournot_equilibrium(&QuadraticMarket::desk(), 2).unwrap();
        assert!((c.outcome.flow - 8.0 / 3.0).abs() < 1e-12);
        assert!((c.outcome.tariff - 22.0 / 3.0).abs() < 1e-12);
        assert!((c.outcome.theta - 0.8).abs() < 1e-12);
    }

    #[test]
    fn stackelberg_desk() {
        let s = stackelberg_chain(&QuadraticMarket::desk()).unwrap();
        assert_eq!(s.tariff, 12.0);
        assert!(s.exceeds_monopoly);
        assert!((s.flow - 20.0 / 12.0).abs() < 1e-12);
        assert!((s.direct_tariff - 10.0).abs() < 1e-6, "{}", s.direct_tariff);
        assert!((s.direct_flow - 4.0 / 3.0).abs() < 1e-6, "{}", s.direct_flow);
    }

    #[test]
    fn precondition_names_inequality() {
        let mut m = QuadraticMarket::desk();
        m.base_cost = 18.0;
        let e = monopoly_optimum(&m).unwrap_err();
        assert!(e.to_string().contains("must be positive"));
    }

    #[test]
    fn edgeworth_base_costs() {
        let inst = EdgeworthInstance::two_wagon_types([10.0, 10.0]);
        let r = edgeworth_search(&inst, &inst.integer_grid()).unwrap();
        assert_eq!(r.tariffs, vec![22.0, 18.0]);
        assert_eq!(r.profit, 12600.0);
    }

    #[test]
    fn single_threshold_is_priced_at_threshold() {
        let inst = EdgeworthInstance {
            segments: vec![Segment {
                name: "only".into(),
                wagons: 10.0,
                options: vec![ServiceOption { service: 0, conditions: vec![cond([1.0, 0.0], Relation::Le, 7.0)] }],
            }],
            costs: vec![1.0, 1.0],
        };
        let r = edgeworth_search(&inst, &inst.integer_grid()).unwrap();
        assert_eq!(r.tariffs[0], 7.0);
    }
}
