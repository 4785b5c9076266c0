//! Producer and consumer objectives, their conjugate profit functions and the
//! induced demand and supply maps.

use crate::error::AgentError;
use crate::network::Network;
use serde::{Deserialize, Serialize};

const BISECTION_STEPS: usize = 200;

/// Concave nondecreasing revenue of a consumer for one commodity, flat past
/// its saturation cap.
pub trait Revenue {
    fn value(&self, x: f64) -> f64;
    /// Right derivative for `x` below the cap, zero at or beyond it.
    fn marginal(&self, x: f64) -> f64;
    fn curvature(&self, x: f64) -> f64;
    fn cap(&self) -> f64;

    fn demand(&self, p: f64) -> f64 {
        numeric_demand(self, p)
    }

    /// Π(p) = max_{x ≥ 0} F(x) − p x.
    fn profit(&self, p: f64) -> f64 {
        let x = self.demand(p);
        self.value(x) - p * x
    }

    /// Prices at which `x` is an optimal purchase, widened by `tol` when
    /// deciding whether `x` sits on the boundary.
    fn price_interval(&self, x: f64, tol: f64) -> (f64, f64) {
        let left = self.marginal((x - tol).max(0.0));
        if x <= tol {
            (left, f64::INFINITY)
        } else if x >= self.cap() - tol {
            (0.0, self.marginal((self.cap() - tol).max(0.0)).max(0.0))
        } else {
            let m = self.marginal(x);
            (m, m)
        }
    }
}

/// Convex nondecreasing production cost, infinite beyond capacity.
pub trait Cost {
    fn value(&self, y: f64) -> f64;
    fn marginal(&self, y: f64) -> f64;
    fn curvature(&self, y: f64) -> f64;
    fn cap(&self) -> f64;

    fn supply(&self, p: f64) -> f64 {
        numeric_supply(self, p)
    }

    /// π(p̂) = max_{0 ≤ y ≤ cap} p̂ y − G(y).
    fn profit(&self, p: f64) -> f64 {
        let y = self.supply(p);
        p * y - self.value(y)
    }

    fn price_interval(&self, y: f64, tol: f64) -> (f64, f64) {
        if y <= tol {
            (0.0, self.marginal(0.0))
        } else if y >= self.cap() - tol {
            (self.marginal(self.cap()), f64::INFINITY)
        } else {
            let m = self.marginal(y);
            (m, m)
        }
    }
}

/// Maximizer of `F(x) − p x` by bisection on the marginal revenue.
pub fn numeric_demand<F: Revenue + ?Sized>(f: &F, p: f64) -> f64 {
    let cap = f.cap();
    if f.marginal(0.0) <= p {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, cap);
    if f.marginal(hi * (1.0 - 1e-15)) >= p {
        return cap;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f.marginal(mid) > p {
            lo = mid
        } else {
            hi = mid
        }
    }
    0.5 * (lo + hi)
}

/// Maximizer of `p y − G(y)` over the capacity range by bisection.
pub fn numeric_supply<G: Cost + ?Sized>(g: &G, p: f64) -> f64 {
    let cap = g.cap();
    if g.marginal(0.0) >= p {
        return 0.0;
    }
    if g.marginal(cap) <= p {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if g.marginal(mid) < p {
            lo = mid
        } else {
            hi = mid
        }
    }
    0.5 * (lo + hi)
}

/// F(x) = b x + a x² up to the cap, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticConsumer {
    pub b: f64,
    pub a: f64,
    pub cap: f64,
}

/// G(y) = B y + A y² up to the cap, infinite afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProducer {
    pub b: f64,
    pub a: f64,
    pub cap: f64,
}

impl QuadraticConsumer {
    pub fn new(b: f64, a: f64, cap: f64) -> Result<Self, AgentError> {
        let c = QuadraticConsumer { b, a, cap };
        c.validate("consumer")?;
        Ok(c)
    }

    pub fn validate(&self, who: &str) -> Result<(), AgentError> {
        let bad = |reason: String| Err(AgentError::Invalid { who: who.into(), reason });
        if !(self.b.is_finite() && self.b > 0.0) {
            return bad(format!("linear coefficient must be positive, got {}", self.b));
        }
        if !(self.a.is_finite() && self.a < 0.0) {
            return bad(format!("quadratic coefficient must be negative, got {}", self.a));
        }
        let peak = -self.b / (2.0 * self.a);
        if !(self.cap > 0.0 && self.cap <= peak * (1.0 + 1e-12)) {
            return bad(format!("saturation cap must lie in (0, {peak}], got {}", self.cap));
        }
        Ok(())
    }

    /// Marginal revenue at the cap; prices at or below it saturate demand.
    pub fn saturation_price(&self) -> f64 {
        self.b + 2.0 * self.a * self.cap
    }
}

impl Revenue for QuadraticConsumer {
    fn value(&self, x: f64) -> f64 {
        let x = x.min(self.cap);
        self.b * x + self.a * x * x
    }
    fn marginal(&self, x: f64) -> f64 {
        if x < self.cap {
            self.b + 2.0 * self.a * x
        } else {
            0.0
        }
    }
    fn curvature(&self, x: f64) -> f64 {
        if x < self.cap {
            2.0 * self.a
        } else {
            0.0
        }
    }
    fn cap(&self) -> f64 {
        self.cap
    }
    fn demand(&self, p: f64) -> f64 {
        ((p - self.b) / (2.0 * self.a)).clamp(0.0, self.cap)
    }
    fn profit(&self, p: f64) -> f64 {
        if self.saturation_price() <= p {
            let m = (self.b - p).max(0.0);
            -m * m / (4.0 * self.a)
        } else {
            (self.b - p) * self.cap + self.a * self.cap * self.cap
        }
    }
}

impl QuadraticProducer {
    pub fn new(b: f64, a: f64, cap: f64) -> Result<Self, AgentError> {
        let p = QuadraticProducer { b, a, cap };
        p.validate("producer")?;
        Ok(p)
    }

    pub fn validate(&self, who: &str) -> Result<(), AgentError> {
        let bad = |reason: String| Err(AgentError::Invalid { who: who.into(), reason });
        if !(self.b.is_finite() && self.b > 0.0) {
            return bad(format!("linear coefficient must be positive, got {}", self.b));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return bad(format!("quadratic coefficient must be positive, got {}", self.a));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return bad(format!("capacity must be positive, got {}", self.cap));
        }
        Ok(())
    }

    pub fn saturation_price(&self) -> f64 {
        self.b + 2.0 * self.a * self.cap
    }
}

impl Cost for QuadraticProducer {
    fn value(&self, y: f64) -> f64 {
        if y > self.cap * (1.0 + 1e-12) + 1e-12 {
            f64::INFINITY
        } else {
            self.b * y + self.a * y * y
        }
    }
    fn marginal(&self, y: f64) -> f64 {
        if y > self.cap * (1.0 + 1e-12) + 1e-12 {
            f64::INFINITY
        } else {
            self.b + 2.0 * self.a * y
        }
    }
    fn curvature(&self, _y: f64) -> f64 {
        2.0 * self.a
    }
    fn cap(&self) -> f64 {
        self.cap
    }
    fn supply(&self, p: f64) -> f64 {
        ((p - self.b) / (2.0 * self.a)).clamp(0.0, self.cap)
    }
    fn profit(&self, p: f64) -> f64 {
        if p <= self.saturation_price() {
            let m = (p - self.b).max(0.0);
            m * m / (4.0 * self.a)
        } else {
            (p - self.b) * self.cap - self.a * self.cap * self.cap
        }
    }
}

/// Revenue and cost tables indexed by agent and commodity; `None` means the
/// agent does not trade that commodity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub consumers: Vec<Vec<Option<QuadraticConsumer>>>,
    pub producers: Vec<Vec<Option<QuadraticProducer>>>,
}

impl AgentSpec {
    pub fn new(
        net: &Network,
        consumers: Vec<Vec<Option<QuadraticConsumer>>>,
        producers: Vec<Vec<Option<QuadraticProducer>>>,
    ) -> Result<Self, AgentError> {
        let spec = AgentSpec { consumers, producers };
        spec.validate(net)?;
        Ok(spec)
    }

    /// Every agent trades one commodity with the same function.
    pub fn single(net: &Network, consumer: QuadraticConsumer, producer: QuadraticProducer) -> Result<Self, AgentError> {
        let k = net.n_commodities();
        AgentSpec::new(
            net,
            vec![vec![Some(consumer); k]; net.consumers().len()],
            vec![vec![Some(producer); k]; net.producers().len()],
        )
    }

    pub fn validate(&self, net: &Network) -> Result<(), AgentError> {
        let k = net.n_commodities();
        if self.consumers.len() != net.consumers().len() {
            return Err(AgentError::Shape { side: "consumer", got: self.consumers.len(), expected: net.consumers().len() });
        }
        if self.producers.len() != net.producers().len() {
            return Err(AgentError::Shape { side: "producer", got: self.producers.len(), expected: net.producers().len() });
        }
        for (i, row) in self.consumers.iter().enumerate() {
            if row.len() != k {
                return Err(AgentError::Shape { side: "consumer commodity", got: row.len(), expected: k });
            }
            for (c, f) in row.iter().enumerate() {
                if let Some(f) = f {
                    f.validate(&format!("consumer {} / {}", net.consumers()[i].name, net.commodities()[c]))?;
                }
            }
        }
        for (j, row) in self.producers.iter().enumerate() {
            if row.len() != k {
                return Err(AgentError::Shape { side: "producer commodity", got: row.len(), expected: k });
            }
            for (c, g) in row.iter().enumerate() {
                if let Some(g) = g {
                    g.validate(&format!("producer {} / {}", net.producers()[j].name, net.commodities()[c]))?;
                }
            }
        }
        Ok(())
    }

    pub fn revenue(&self, i: usize, k: usize) -> Option<&QuadraticConsumer> {
        self.consumers[i][k].as_ref()
    }

    pub fn cost(&self, j: usize, k: usize) -> Option<&QuadraticProducer> {
        self.producers[j][k].as_ref()
    }

    /// Σ_k F_ik(x_k).
    pub fn consumer_value(&self, i: usize, x: &[f64]) -> f64 {
        self.consumers[i].iter().zip(x).map(|(f, &xk)| f.map_or(0.0, |f| f.value(xk))).sum()
    }

    /// Σ_k G_jk(y_k).
    pub fn producer_value(&self, j: usize, y: &[f64]) -> f64 {
        self.producers[j].iter().zip(y).map(|(g, &yk)| g.map_or(if yk > 0.0 { f64::INFINITY } else { 0.0 }, |g| g.value(yk))).sum()
    }

    pub fn consumer_profit(&self, i: usize, p: &[f64]) -> f64 {
        self.consumers[i].iter().zip(p).map(|(f, &pk)| f.map_or(0.0, |f| f.profit(pk))).sum()
    }

    pub fn producer_profit(&self, j: usize, p: &[f64]) -> f64 {
        self.producers[j].iter().zip(p).map(|(g, &pk)| g.map_or(0.0, |g| g.profit(pk))).sum()
    }
}

/// F̃(x) = inf_{p ≥ 0} Π(p) + p x, by bisection on the convex objective's slope.
pub fn revenue_from_profit<F: Revenue + ?Sized>(f: &F, x: f64) -> f64 {
    let phi = |p: f64| f.profit(p) + p * x;
    // Slope x − demand(p) is nondecreasing in p.
    let mut hi = 1.0;
    while f.demand(hi) > x && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    if f.demand(lo) <= x {
        return phi(0.0);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f.demand(mid) > x {
            lo = mid
        } else {
            hi = mid
        }
    }
    phi(lo).min(phi(hi))
}

/// G̃(y) = sup_{p ≥ 0} p y − π(p), by bisection on the concave objective's slope.
pub fn cost_from_profit<G: Cost + ?Sized>(g: &G, y: f64) -> f64 {
    if y > g.cap() {
        return f64::INFINITY;
    }
    let psi = |p: f64| p * y - g.profit(p);
    let mut hi = 1.0;
    while g.supply(hi) < y && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    if g.supply(lo) >= y {
        return psi(0.0);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if g.supply(mid) < y {
            lo = mid
        } else {
            hi = mid
        }
    }
    psi(lo).max(psi(hi))
}

/// Largest |F − F̃| over a grid of quantities.
pub fn fenchel_roundtrip_revenue<F: Revenue + ?Sized>(f: &F, grid: &[f64]) -> f64 {
    grid.iter().map(|&x| (f.value(x) - revenue_from_profit(f, x)).abs()).fold(0.0, f64::max)
}

/// Largest |G − G̃| over a grid of quantities.
pub fn fenchel_roundtrip_cost<G: Cost + ?Sized>(g: &G, grid: &[f64]) -> f64 {
    grid.iter().map(|&y| (g.value(y) - cost_from_profit(g, y)).abs()).fold(0.0, f64::max)
}

/// Evenly spaced grid on `[0, cap]`.
pub fn uniform_grid(cap: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| if k + 1 == points { cap } else { cap * k as f64 / (points - 1) as f64 }).collect()
}
