//! Restricted master problem over a fixed set of shipment columns.
//!
//! Each column ships one commodity from a producer to a consumer at a fixed
//! unit cost and occupies a list of capacity rows. The primal is solved by the
//! interior point method; multipliers are then replaced by the minimum-norm
//! surcharges and floor subsidies consistent with the primal optimum, and
//! prices closest to marginal values among those.

use crate::agents::{AgentSpec, Cost, Revenue};
use crate::error::SolveError;
use crate::qp::{QpSettings, QuadProgram, Row};

#[derive(Debug, Clone)]
pub(crate) struct Column {
    pub consumer: usize,
    pub producer: usize,
    pub commodity: usize,
    pub cost: f64,
    pub rows: Vec<usize>,
    /// Index of the floor row covering this column's triple.
    pub floor: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct FloorRow {
    pub minimum: f64,
}

pub(crate) struct Master<'a> {
    pub agents: &'a AgentSpec,
    pub columns: Vec<Column>,
    pub capacities: Vec<f64>,
    pub floors: Vec<FloorRow>,
}

#[derive(Debug, Clone)]
pub(crate) struct MasterSolution {
    pub consumption: Vec<Vec<f64>>,
    pub production: Vec<Vec<f64>>,
    pub column_flows: Vec<f64>,
    pub consumer_prices: Vec<Vec<f64>>,
    pub producer_prices: Vec<Vec<f64>>,
    pub row_prices: Vec<f64>,
    pub floor_prices: Vec<f64>,
    pub primal_value: f64,
}

struct Layout {
    x_var: Vec<Vec<Option<usize>>>,
    y_var: Vec<Vec<Option<usize>>>,
    first_col: usize,
    n: usize,
}

impl<'a> Master<'a> {
    fn layout(&self) -> Layout {
        let mut n = 0;
        let mut var = |present: bool| {
            if present {
                n += 1;
                Some(n - 1)
            } else {
                None
            }
        };
        let x_var: Vec<Vec<Option<usize>>> =
            self.agents.consumers.iter().map(|row| row.iter().map(|f| var(f.is_some())).collect()).collect();
        let y_var: Vec<Vec<Option<usize>>> =
            self.agents.producers.iter().map(|row| row.iter().map(|g| var(g.is_some())).collect()).collect();
        Layout { x_var, y_var, first_col: n, n: n + self.columns.len() }
    }

    pub fn solve(&self, settings: &QpSettings) -> Result<MasterSolution, SolveError> {
        let lay = self.layout();
        let mut qp = QuadProgram::new(lay.n);
        let n_cons = self.agents.consumers.len();
        let n_prod = self.agents.producers.len();

        let mut demand_row = vec![vec![None; 0]; n_cons];
        for i in 0..n_cons {
            demand_row[i] = vec![None; lay.x_var[i].len()];
            for (k, xv) in lay.x_var[i].iter().enumerate() {
                let Some(xv) = *xv else { continue };
                let f = self.agents.revenue(i, k).unwrap();
                qp.q[xv] = -2.0 * f.a;
                qp.c[xv] = -f.b;
                qp.bound(xv, 0.0, f.cap);
                let mut row: Row = vec![(xv, 1.0)];
                for (c, col) in self.columns.iter().enumerate() {
                    if col.consumer == i && col.commodity == k {
                        row.push((lay.first_col + c, -1.0));
                    }
                }
                demand_row[i][k] = Some(qp.add_ineq(row, 0.0));
            }
        }
        let mut supply_row = vec![Vec::new(); n_prod];
        for j in 0..n_prod {
            supply_row[j] = vec![None; lay.y_var[j].len()];
            for (k, yv) in lay.y_var[j].iter().enumerate() {
                let Some(yv) = *yv else { continue };
                let g = self.agents.cost(j, k).unwrap();
                qp.q[yv] = 2.0 * g.a;
                qp.c[yv] = g.b;
                qp.bound(yv, 0.0, g.cap);
                let mut row: Row = vec![(yv, -1.0)];
                for (c, col) in self.columns.iter().enumerate() {
                    if col.producer == j && col.commodity == k {
                        row.push((lay.first_col + c, 1.0));
                    }
                }
                supply_row[j][k] = Some(qp.add_ineq(row, 0.0));
            }
        }
        let mut cap_rows: Vec<Row> = vec![Vec::new(); self.capacities.len()];
        let mut floor_rows: Vec<Row> = vec![Vec::new(); self.floors.len()];
        for (c, col) in self.columns.iter().enumerate() {
            let v = lay.first_col + c;
            qp.c[v] = col.cost;
            qp.bound(v, 0.0, f64::INFINITY);
            for &r in &col.rows {
                cap_rows[r].push((v, 1.0));
            }
            if let Some(f) = col.floor {
                floor_rows[f].push((v, -1.0));
            }
        }
        let cap_idx: Vec<usize> =
            cap_rows.into_iter().zip(&self.capacities).map(|(row, &cap)| qp.add_ineq(row, cap)).collect();
        let floor_idx: Vec<usize> =
            floor_rows.into_iter().zip(&self.floors).map(|(row, fl)| qp.add_ineq(row, -fl.minimum)).collect();

        let sol = qp.solve(settings);
        if !sol.converged && sol.residual > 1e-8 {
            return Err(SolveError::NonConvergence { iterations: sol.iterations, residual: sol.residual });
        }
        let get = |v: Option<usize>| v.map_or(0.0, |v| sol.x[v].max(0.0));
        let consumption: Vec<Vec<f64>> = lay.x_var.iter().map(|r| r.iter().map(|&v| get(v)).collect()).collect();
        let production: Vec<Vec<f64>> = lay.y_var.iter().map(|r| r.iter().map(|&v| get(v)).collect()).collect();
        let column_flows: Vec<f64> = (0..self.columns.len()).map(|c| sol.x[lay.first_col + c].max(0.0)).collect();
        let dual = |r: Option<usize>| r.map_or(0.0, |r| sol.z[r]);
        let mut out = MasterSolution {
            consumer_prices: demand_row.iter().map(|r| r.iter().map(|&v| dual(v)).collect()).collect(),
            producer_prices: supply_row.iter().map(|r| r.iter().map(|&v| dual(v)).collect()).collect(),
            row_prices: cap_idx.iter().map(|&r| sol.z[r]).collect(),
            floor_prices: floor_idx.iter().map(|&r| sol.z[r]).collect(),
            primal_value: 0.0,
            consumption,
            production,
            column_flows,
        };
        out.primal_value = self.primal_value(&out);
        self.refine(&mut out, settings)?;
        Ok(out)
    }

    pub fn primal_value(&self, s: &MasterSolution) -> f64 {
        let rev: f64 = (0..s.consumption.len()).map(|i| self.agents.consumer_value(i, &s.consumption[i])).sum();
        let cost: f64 = (0..s.production.len()).map(|j| self.agents.producer_value(j, &s.production[j])).sum();
        let ship: f64 = self.columns.iter().zip(&s.column_flows).map(|(c, x)| c.cost * x).sum();
        rev - cost - ship
    }

    /// Replaces the solver's multipliers by the lexicographically chosen
    /// certificate: minimum-norm surcharges and subsidies, then prices
    /// nearest the marginal values. Column rows are elastic with an ℓ1
    /// penalty so solver noise in the primal cannot make them inconsistent.
    fn refine(&self, s: &mut MasterSolution, settings: &QpSettings) -> Result<(), SolveError> {
        let price_scale = 1.0
            + s.consumer_prices.iter().flatten().chain(s.producer_prices.iter().flatten()).fold(0.0f64, |m, x| m.max(x.abs()));
        let mut weight = 10.0 * price_scale;
        for _ in 0..4 {
            if let Some(x) = self.refine_with(s, settings, weight)? {
                let val = |v: Option<usize>| v.map_or(0.0, |v| x.prices[v].max(0.0));
                s.consumer_prices = x.p_var.iter().map(|r| r.iter().map(|&v| val(v)).collect()).collect();
                s.producer_prices = x.q_var.iter().map(|r| r.iter().map(|&v| val(v)).collect()).collect();
                s.row_prices = x.t_var.iter().map(|&v| x.prices[v].max(0.0)).collect();
                s.floor_prices = x.g_var.iter().map(|&v| x.prices[v].max(0.0)).collect();
                return Ok(());
            }
            weight *= 100.0;
        }
        Err(SolveError::NonConvergence { iterations: 0, residual: f64::NAN })
    }

    /// One elastic refinement at penalty `weight`; `None` when the penalty
    /// was not exact (rows left violated beyond noise level).
    fn refine_with(&self, s: &MasterSolution, settings: &QpSettings, weight: f64) -> Result<Option<Refined>, SolveError> {
        let n_cons = s.consumption.len();
        let n_prod = s.production.len();
        let flow_scale = 1.0 + s.column_flows.iter().chain(s.consumption.iter().flatten()).fold(0.0f64, |m, x| m.max(*x));
        let tol_x = 1e-7 * flow_scale;
        let price_scale = 1.0
            + s.consumer_prices.iter().flatten().chain(s.producer_prices.iter().flatten()).fold(0.0f64, |m, x| m.max(x.abs()));
        let point = 1e-12 * price_scale;

        // Variable layout: p (i,k), p̂ (j,k), row surcharges, floor subsidies, then elastic slacks.
        let mut n = 0;
        let mut alloc = |present: bool| {
            if present {
                n += 1;
                Some(n - 1)
            } else {
                None
            }
        };
        let p_var: Vec<Vec<Option<usize>>> =
            self.agents.consumers.iter().map(|r| r.iter().map(|f| alloc(f.is_some())).collect()).collect();
        let q_var: Vec<Vec<Option<usize>>> =
            self.agents.producers.iter().map(|r| r.iter().map(|g| alloc(g.is_some())).collect()).collect();
        let t_var: Vec<usize> = (0..self.capacities.len()).map(|_| alloc(true).unwrap()).collect();
        let g_var: Vec<usize> = (0..self.floors.len()).map(|_| alloc(true).unwrap()).collect();
        let n_prices = p_var.iter().chain(&q_var).flatten().flatten().count() + t_var.len() + g_var.len();
        let active: Vec<bool> = s.column_flows.iter().map(|&x| x > tol_x).collect();
        let mut e_var = Vec::new();
        for &a in &active {
            let plus = alloc(true).unwrap();
            let minus = if a { alloc(true) } else { None };
            e_var.push((plus, minus));
        }

        let mut inflow = vec![vec![0.0; s.consumption.first().map_or(0, |r| r.len())]; n_cons];
        let mut outflow = vec![vec![0.0; s.production.first().map_or(0, |r| r.len())]; n_prod];
        let mut load = vec![0.0; self.capacities.len()];
        let mut floor_flow = vec![0.0; self.floors.len()];
        for (col, &x) in self.columns.iter().zip(&s.column_flows) {
            inflow[col.consumer][col.commodity] += x;
            outflow[col.producer][col.commodity] += x;
            for &r in &col.rows {
                load[r] += x;
            }
            if let Some(f) = col.floor {
                floor_flow[f] += x;
            }
        }

        let mut base = QuadProgram::new(n);
        let mut p_ref = vec![0.0; n_prices];
        let set_interval = |qp: &mut QuadProgram, v: usize, lo: f64, hi: f64| {
            if hi - lo <= point {
                qp.add_eq(vec![(v, 1.0)], 0.5 * (lo + hi));
            } else {
                qp.bound(v, lo, hi);
            }
        };
        for i in 0..n_cons {
            for (k, pv) in p_var[i].iter().enumerate() {
                let Some(pv) = *pv else { continue };
                let f = self.agents.revenue(i, k).unwrap();
                let x = s.consumption[i][k];
                let (lo, mut hi) = f.price_interval(x, tol_x);
                if inflow[i][k] - x > tol_x {
                    hi = hi.min(0.0);
                }
                set_interval(&mut base, pv, lo.max(0.0), hi.max(0.0));
                p_ref[pv] = f.b + 2.0 * f.a * x.min(f.cap);
            }
        }
        for j in 0..n_prod {
            for (k, qv) in q_var[j].iter().enumerate() {
                let Some(qv) = *qv else { continue };
                let g = self.agents.cost(j, k).unwrap();
                let y = s.production[j][k];
                let (lo, mut hi) = g.price_interval(y, tol_x);
                if y - outflow[j][k] > tol_x {
                    hi = hi.min(0.0);
                }
                set_interval(&mut base, qv, lo.max(0.0), hi.max(0.0));
                p_ref[qv] = g.b + 2.0 * g.a * y.min(g.cap);
            }
        }
        for (r, &tv) in t_var.iter().enumerate() {
            if load[r] < self.capacities[r] - tol_x {
                base.add_eq(vec![(tv, 1.0)], 0.0);
            } else {
                base.bound(tv, 0.0, f64::INFINITY);
            }
        }
        for (f, &gv) in g_var.iter().enumerate() {
            if floor_flow[f] > self.floors[f].minimum + tol_x {
                base.add_eq(vec![(gv, 1.0)], 0.0);
            } else {
                base.bound(gv, 0.0, f64::INFINITY);
            }
        }
        for (c, col) in self.columns.iter().enumerate() {
            let mut row: Row = Vec::new();
            row.push((p_var[col.consumer][col.commodity].unwrap(), 1.0));
            row.push((q_var[col.producer][col.commodity].unwrap(), -1.0));
            for &r in &col.rows {
                row.push((t_var[r], -1.0));
            }
            if let Some(f) = col.floor {
                row.push((g_var[f], 1.0));
            }
            let (plus, minus) = e_var[c];
            row.push((plus, -1.0));
            base.bound(plus, 0.0, f64::INFINITY);
            base.c[plus] = weight;
            if let Some(m) = minus {
                row.push((m, 1.0));
                base.bound(m, 0.0, f64::INFINITY);
                base.c[m] = weight;
                base.add_eq(row, col.cost);
            } else {
                base.add_ineq(row, col.cost);
            }
        }
        let slack_ok = |x: &[f64]| x[n_prices..].iter().all(|&e| e <= 1e-7 * price_scale);

        // Stage 1: smallest surcharges and subsidies.
        let mut stage1 = base.clone();
        for (v, &r) in p_ref.iter().enumerate() {
            stage1.q[v] = 2e-9;
            stage1.c[v] = -2e-9 * r;
        }
        for &v in t_var.iter().chain(&g_var) {
            stage1.q[v] = 2.0;
            stage1.c[v] = 0.0;
        }
        let sol1 = stage1.solve(settings);
        if !sol1.converged && sol1.residual > 1e-8 {
            return Err(SolveError::NonConvergence { iterations: sol1.iterations, residual: sol1.residual });
        }
        if !slack_ok(&sol1.x) {
            return Ok(None);
        }

        // Stage 2: hold those, move prices toward marginal values.
        let mut stage2 = base;
        for &v in t_var.iter().chain(&g_var) {
            stage2.add_eq(vec![(v, 1.0)], sol1.x[v].max(0.0));
        }
        for (v, &r) in p_ref.iter().enumerate() {
            if t_var.contains(&v) || g_var.contains(&v) {
                continue;
            }
            stage2.q[v] = 2.0;
            stage2.c[v] = -2.0 * r;
        }
        let sol2 = stage2.solve(settings);
        let prices = if (sol2.converged || sol2.residual <= 1e-8) && slack_ok(&sol2.x) { sol2.x } else { sol1.x };
        Ok(Some(Refined { prices, p_var, q_var, t_var, g_var }))
    }
}

struct Refined {
    prices: Vec<f64>,
    p_var: Vec<Vec<Option<usize>>>,
    q_var: Vec<Vec<Option<usize>>>,
    t_var: Vec<usize>,
    g_var: Vec<usize>,
}
