//! Primal-dual interior point solver for convex quadratic programs with a
//! diagonal Hessian:
//!
//! ```text
//! minimize    ½ Σ q_i x_i² + c·x
//! subject to  A x = b,   G x ≤ h
//! ```
//!
//! Rows are stored sparsely; the reduced KKT system is assembled densely and
//! factored with LU each iteration (Mehrotra predictor-corrector).

use nalgebra::{DMatrix, DVector};

/// Sparse row: `(column, coefficient)` pairs.
pub type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default)]
pub struct QuadProgram {
    pub n: usize,
    pub q: Vec<f64>,
    pub c: Vec<f64>,
    pub eq_rows: Vec<Row>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<Row>,
    pub ineq_rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { tol: 1e-11, max_iter: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows (sign convention: `Qx + c + Aᵀy + Gᵀz = 0`).
    pub y: Vec<f64>,
    /// Nonnegative multipliers of the inequality rows.
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest scaled residual at termination.
    pub residual: f64,
    pub converged: bool,
}

impl QuadProgram {
    pub fn new(n: usize) -> Self {
        QuadProgram { n, q: vec![0.0; n], c: vec![0.0; n], ..Default::default() }
    }

    pub fn add_eq(&mut self, row: Row, rhs: f64) -> usize {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rows.len() - 1
    }

    pub fn add_ineq(&mut self, row: Row, rhs: f64) -> usize {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
        self.ineq_rows.len() - 1
    }

    /// Adds `lo ≤ x_j ≤ hi`, skipping infinite sides.
    pub fn bound(&mut self, j: usize, lo: f64, hi: f64) {
        if lo.is_finite() {
            self.add_ineq(vec![(j, -1.0)], -lo);
        }
        if hi.is_finite() {
            self.add_ineq(vec![(j, 1.0)], hi);
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.q)
            .zip(&self.c)
            .map(|((xi, qi), ci)| 0.5 * qi * xi * xi + ci * xi)
            .sum()
    }

    pub fn solve(&self, settings: &QpSettings) -> QpSolution {
        Ipm::new(self).run(settings)
    }
}

fn row_dot(row: &Row, x: &[f64]) -> f64 {
    row.iter().map(|&(j, a)| a * x[j]).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Factorised regularised KKT matrix plus the unregularised one, which
/// iterative refinement corrects against. Full pivoting is the fallback when
/// partial pivoting meets a zero pivot.
struct Factor {
    exact: DMatrix<f64>,
    lu: Lu,
}

enum Lu {
    Partial(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Full(nalgebra::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(exact: DMatrix<f64>, regularised: DMatrix<f64>, full: bool) -> Self {
        let lu = if full { Lu::Full(regularised.full_piv_lu()) } else { Lu::Partial(regularised.lu()) };
        Factor { exact, lu }
    }

    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.lu {
            Lu::Partial(lu) => lu.solve(b),
            Lu::Full(lu) => lu.solve(b),
        }
    }
}

struct Ipm<'a> {
    p: &'a QuadProgram,
    n: usize,
    me: usize,
    mi: usize,
}

struct Step {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a QuadProgram) -> Self {
        Ipm { p, n: p.n, me: p.eq_rows.len(), mi: p.ineq_rows.len() }
    }

    fn residuals(&self, x: &[f64], y: &[f64], z: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut rd: Vec<f64> = (0..self.n).map(|j| p.q[j] * x[j] + p.c[j]).collect();
        for (r, row) in p.eq_rows.iter().enumerate() {
            for &(j, a) in row {
                rd[j] += a * y[r];
            }
        }
        for (r, row) in p.ineq_rows.iter().enumerate() {
            for &(j, a) in row {
                rd[j] += a * z[r];
            }
        }
        let rp: Vec<f64> = p.eq_rows.iter().zip(&p.eq_rhs).map(|(row, b)| row_dot(row, x) - b).collect();
        let rg: Vec<f64> = p
            .ineq_rows
            .iter()
            .zip(&p.ineq_rhs)
            .zip(s)
            .map(|((row, h), si)| row_dot(row, x) + si - h)
            .collect();
        (rd, rp, rg)
    }

    /// Reduced system matrix for weights `w = z/s`.
    fn assemble(&self, w: &[f64], reg: f64) -> DMatrix<f64> {
        let p = self.p;
        let dim = self.n + self.me;
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        let reg = reg * (1.0 + inf_norm(&p.q));
        for j in 0..self.n {
            k[(j, j)] += p.q[j] + reg;
        }
        for (r, row) in p.ineq_rows.iter().enumerate() {
            for &(i, ai) in row {
                for &(j, aj) in row {
                    k[(i, j)] += w[r] * ai * aj;
                }
            }
        }
        for (r, row) in p.eq_rows.iter().enumerate() {
            for &(j, a) in row {
                k[(self.n + r, j)] += a;
                k[(j, self.n + r)] += a;
            }
            k[(self.n + r, self.n + r)] -= reg;
        }
        k
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        sys: &Factor,
        s: &[f64],
        z: &[f64],
        rd: &[f64],
        rp: &[f64],
        rg: &[f64],
        rsz: &[f64],
    ) -> Option<Step> {
        let p = self.p;
        let mut rhs = DVector::<f64>::zeros(self.n + self.me);
        for j in 0..self.n {
            rhs[j] = -rd[j];
        }
        // u = (−rsz + Z rg) / s
        let u: Vec<f64> = (0..self.mi).map(|r| (-rsz[r] + z[r] * rg[r]) / s[r]).collect();
        for (r, row) in p.ineq_rows.iter().enumerate() {
            for &(j, a) in row {
                rhs[j] -= a * u[r];
            }
        }
        for r in 0..self.me {
            rhs[self.n + r] = -rp[r];
        }
        let k = &sys.exact;
        let mut sol = sys.solve(&rhs)?;
        let mut r = &rhs - k * &sol;
        // Refinement against a nearly singular exact matrix can diverge;
        // keep only steps that shrink the residual.
        for _ in 0..3 {
            let cand = &sol + sys.solve(&r)?;
            let rc = &rhs - k * &cand;
            if !(rc.amax() < r.amax()) {
                break;
            }
            sol = cand;
            r = rc;
        }
        let dx: Vec<f64> = (0..self.n).map(|j| sol[j]).collect();
        let dy: Vec<f64> = (0..self.me).map(|r| sol[self.n + r]).collect();
        let mut dz = vec![0.0; self.mi];
        let mut ds = vec![0.0; self.mi];
        for (r, row) in p.ineq_rows.iter().enumerate() {
            let gdx = row_dot(row, &dx);
            ds[r] = -rg[r] - gdx;
            dz[r] = u[r] + z[r] / s[r] * gdx;
        }
        if dx.iter().chain(&dy).chain(&dz).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Step { dx, dy, dz, ds })
    }

    fn max_step(v: &[f64], dv: &[f64]) -> f64 {
        let mut a = f64::INFINITY;
        for (vi, di) in v.iter().zip(dv) {
            if *di < 0.0 {
                a = a.min(-vi / di);
            }
        }
        a
    }

    fn run(&self, settings: &QpSettings) -> QpSolution {
        let p = self.p;
        let (n, me, mi) = (self.n, self.me, self.mi);
        let scale_c = 1.0 + inf_norm(&p.c);
        let scale_b = 1.0 + inf_norm(&p.eq_rhs);
        let scale_h = 1.0 + inf_norm(&p.ineq_rhs);

        // Initial point from the W = I system.
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; me];
        let mut s = vec![1.0; mi];
        let mut z = vec![1.0; mi];
        if let Some(st) = {
            let ones = vec![1.0; mi];
            let lu = Factor::new(self.assemble(&ones, 0.0), self.assemble(&ones, 1e-12), false);
            let (rd, rp, rg) = self.residuals(&x, &y, &z, &s);
            let rsz: Vec<f64> = vec![0.0; mi];
            // Solve for the least-squares-like start: target rg with s = 1, z = 1.
            self.direction(&lu, &s, &z, &rd, &rp, &rg, &rsz)
        } {
            for j in 0..n {
                x[j] += st.dx[j];
            }
            for r in 0..me {
                y[r] += st.dy[r];
            }
            for r in 0..mi {
                let slack = p.ineq_rhs[r] - row_dot(&p.ineq_rows[r], &x);
                s[r] = slack;
                z[r] = 1.0 + st.dz[r];
            }
            let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
            if smin.is_finite() && smin <= 0.0 {
                let shift = 1.0 - smin;
                s.iter_mut().for_each(|v| *v += shift);
            }
            let zmin = z.iter().cloned().fold(f64::INFINITY, f64::min);
            if zmin.is_finite() && zmin <= 0.0 {
                let shift = 1.0 - zmin;
                z.iter_mut().for_each(|v| *v += shift);
            }
        }

        let mut best = (f64::INFINITY, x.clone(), y.clone(), z.clone());
        let mut iterations = 0;
        for it in 0..settings.max_iter {
            iterations = it;
            let (rd, rp, rg) = self.residuals(&x, &y, &z, &s);
            let mu = if mi > 0 { s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / mi as f64 } else { 0.0 };
            let pobj = p.objective(&x);
            let res = (inf_norm(&rd) / scale_c)
                .max(inf_norm(&rp) / scale_b)
                .max(inf_norm(&rg) / scale_h)
                .max(mu / (1.0 + pobj.abs()));
            if res < best.0 {
                best = (res, x.clone(), y.clone(), z.clone());
            }
            if res <= settings.tol {
                let (x, y, z, res) = self.polish(x, y, z, &s, res);
                return self.finish(x, y, z, it, res, true);
            }

            let w: Vec<f64> = (0..mi).map(|r| z[r] / s[r]).collect();
            let rsz_aff: Vec<f64> = (0..mi).map(|r| s[r] * z[r]).collect();
            let mut factored = None;
            let ladder = [1e-12, 1e-10, 1e-8].map(|r| (r, false)).into_iter().chain([1e-12, 1e-8, 1e-6].map(|r| (r, true)));
            for (reg, full) in ladder {
                let lu = Factor::new(self.assemble(&w, 0.0), self.assemble(&w, reg), full);
                if let Some(d) = self.direction(&lu, &s, &z, &rd, &rp, &rg, &rsz_aff) {
                    factored = Some((lu, d));
                    break;
                }
            }
            let Some((lu, aff)) = factored else { break };
            let a_aff = Self::max_step(&s, &aff.ds).min(Self::max_step(&z, &aff.dz)).min(1.0);
            let sigma = if mi > 0 {
                let mu_aff = (0..mi)
                    .map(|r| (s[r] + a_aff * aff.ds[r]) * (z[r] + a_aff * aff.dz[r]))
                    .sum::<f64>()
                    / mi as f64;
                // Complementarity may not outrun feasibility: once z/s blows
                // up the reduced system can no longer resolve rp and rd.
                let infeas = (inf_norm(&rd) / scale_c).max(inf_norm(&rp) / scale_b).max(inf_norm(&rg) / scale_h);
                let floor = 0.1 * infeas * (1.0 + pobj.abs()) / mu;
                (mu_aff / mu).clamp(0.0, 1.0).powi(3).max(floor.min(0.5))
            } else {
                0.0
            };
            let rsz: Vec<f64> = (0..mi)
                .map(|r| s[r] * z[r] + aff.ds[r] * aff.dz[r] - sigma * mu)
                .collect();
            let d = match self.direction(&lu, &s, &z, &rd, &rp, &rg, &rsz) {
                Some(d) => d,
                None => break,
            };
            let amax = Self::max_step(&s, &d.ds).min(Self::max_step(&z, &d.dz));
            let alpha = (0.99 * amax).min(1.0);
            for j in 0..n {
                x[j] += alpha * d.dx[j];
            }
            for r in 0..me {
                y[r] += alpha * d.dy[r];
            }
            for r in 0..mi {
                s[r] += alpha * d.ds[r];
                z[r] += alpha * d.dz[r];
            }
        }
        let (res, x, y, z) = best;
        let s: Vec<f64> = p.ineq_rows.iter().zip(&p.ineq_rhs).map(|(row, h)| h - row_dot(row, &x)).collect();
        let (x, y, z, res) = self.polish(x, y, z, &s, res);
        self.finish(x, y, z, iterations, res, false)
    }

    /// Re-solves the equality-constrained problem on the apparent active set
    /// (`s < z`) and keeps the result if it is feasible and no worse. Recovers
    /// full primal accuracy at degenerate optima where the path converges
    /// only like √μ.
    fn polish(&self, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, s: &[f64], res: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let p = self.p;
        let active: Vec<usize> = (0..self.mi).filter(|&r| s[r] < z[r]).collect();
        let dim = self.n + self.me + active.len();
        let reg = 1e-13 * (1.0 + inf_norm(&p.q));
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for j in 0..self.n {
            k[(j, j)] = p.q[j] + reg;
            rhs[j] = -p.c[j];
        }
        let rows = p.eq_rows.iter().zip(&p.eq_rhs).chain(active.iter().map(|&r| (&p.ineq_rows[r], &p.ineq_rhs[r])));
        for (r, (row, b)) in rows.enumerate() {
            for &(j, a) in row {
                k[(self.n + r, j)] += a;
                k[(j, self.n + r)] += a;
            }
            k[(self.n + r, self.n + r)] = -reg;
            rhs[self.n + r] = *b;
        }
        let lu = k.clone().lu();
        let Some(mut sol) = lu.solve(&rhs) else { return (x, y, z, res) };
        for _ in 0..3 {
            let r = &rhs - &k * &sol;
            match lu.solve(&r) {
                Some(d) => sol += d,
                None => return (x, y, z, res),
            }
        }
        let xp: Vec<f64> = (0..self.n).map(|j| sol[j]).collect();
        if xp.iter().any(|v| !v.is_finite()) {
            return (x, y, z, res);
        }
        let feas_tol = 1e-9 * (1.0 + inf_norm(&p.ineq_rhs).max(inf_norm(&p.eq_rhs)));
        let eq_ok = p.eq_rows.iter().zip(&p.eq_rhs).all(|(row, b)| (row_dot(row, &xp) - b).abs() <= feas_tol);
        let ineq_ok = p.ineq_rows.iter().zip(&p.ineq_rhs).all(|(row, h)| row_dot(row, &xp) - h <= feas_tol);
        let (f0, f1) = (p.objective(&x), p.objective(&xp));
        if eq_ok && ineq_ok && f1 <= f0 + 1e-12 * (1.0 + f0.abs()) {
            (xp, y, z, res)
        } else {
            (x, y, z, res)
        }
    }

    fn finish(&self, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, iterations: usize, residual: f64, converged: bool) -> QpSolution {
        let objective = self.p.objective(&x);
        QpSolution { x, y, z, objective, iterations, residual, converged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x-3)² + (y+1)²  s.t. 0 ≤ x ≤ 2, y ≥ 0
        let mut qp = QuadProgram::new(2);
        qp.q = vec![2.0, 2.0];
        qp.c = vec![-6.0, 2.0];
        qp.bound(0, 0.0, 2.0);
        qp.bound(1, 0.0, f64::INFINITY);
        let sol = qp.solve(&QpSettings::default());
        assert!(sol.converged);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
    }

    #[test]
    fn equality_constrained_lp_part() {
        // min x + 2y + z²  s.t. x + y + z = 3, all ≥ 0  → z = 0.5, x = 2.5
        let mut qp = QuadProgram::new(3);
        qp.q = vec![0.0, 0.0, 2.0];
        qp.c = vec![1.0, 2.0, 0.0];
        qp.add_eq(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
        for j in 0..3 {
            qp.bound(j, 0.0, f64::INFINITY);
        }
        let sol = qp.solve(&QpSettings::default());
        assert!(sol.converged);
        assert!((sol.x[0] - 2.5).abs() < 1e-8, "{:?}", sol.x);
        assert!((sol.x[2] - 0.5).abs() < 1e-8);
        // Multiplier of the equality: derivative of the objective w.r.t. rhs is −y.
        assert!((sol.y[0] + 1.0).abs() < 1e-8, "{:?}", sol.y);
    }

    #[test]
    fn inequality_multiplier_matches_sensitivity() {
        // max 20x − x² − (2x + x²) − 2x  s.t. x ≤ 2 → multiplier 8.
        let mut qp = QuadProgram::new(1);
        qp.q = vec![4.0];
        qp.c = vec![-16.0];
        let cap = qp.add_ineq(vec![(0, 1.0)], 2.0);
        qp.bound(0, 0.0, f64::INFINITY);
        let sol = qp.solve(&QpSettings::default());
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.z[cap] - 8.0).abs() < 1e-7, "{}", sol.z[cap]);
    }
}
