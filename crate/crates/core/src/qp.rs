//! Dense convex QP solver used by the household scheduler.
//!
//! Solves `min ½xᵀPx + qᵀx` subject to variable bounds `lb ≤ x ≤ ub` and
//! sparse range rows `l ≤ aᵀx ≤ u` (equality when `l == u`) with a
//! primal-dual interior-point method using Mehrotra predictor-corrector
//! steps. The Newton system is reduced to the `n × n` matrix
//! `P + GᵀWG` and factored by Cholesky; equality rows are handled through
//! their (small) Schur complement. Variables whose bounds coincide are
//! substituted out before the iteration starts.
//!
//! The iteration order is fixed and nothing is randomized, so results are
//! bit-for-bit reproducible.

use crate::linalg::{Cholesky, SymMatrix};
use crate::scalar::{max_abs, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow<T> {
    pub idx: Vec<usize>,
    pub val: Vec<T>,
}

impl<T: Real> SparseRow<T> {
    pub fn new() -> Self {
        Self { idx: Vec::new(), val: Vec::new() }
    }

    pub fn push(&mut self, i: usize, v: T) {
        self.idx.push(i);
        self.val.push(v);
    }

    #[inline]
    pub fn dot(&self, x: &[T]) -> T {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }
}

impl<T: Real> Default for SparseRow<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeRow<T> {
    pub row: SparseRow<T>,
    pub lower: T,
    pub upper: T,
    /// Caller-defined identifier reported when the row is binding.
    pub tag: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    pub p: SymMatrix<T>,
    pub q: Vec<T>,
    pub lb: Vec<T>,
    pub ub: Vec<T>,
    pub rows: Vec<RangeRow<T>>,
}

impl<T: Real> QpProblem<T> {
    pub fn new(n: usize) -> Self {
        Self {
            p: SymMatrix::zeros(n),
            q: vec![T::zero(); n],
            lb: vec![T::neg_infinity(); n],
            ub: vec![T::infinity(); n],
            rows: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        let px = self.p.mul_vec(x);
        let half = T::lit(0.5);
        x.iter().zip(&px).zip(&self.q).map(|((&xi, &pi), &qi)| half * xi * pi + qi * xi).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions<T> {
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Real> Default for QpOptions<T> {
    fn default() -> Self {
        Self { max_iter: 5000, tol: T::lit(1e-6) }
    }
}

/// What a constraint refers to when reported as binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    LowerBound(usize),
    UpperBound(usize),
    RowLower(u32),
    RowUpper(u32),
    Equality(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpStatus {
    Solved,
    Infeasible { binding: Vec<Binding> },
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Clone, Copy)]
enum Target {
    Var(usize),
    Row(usize),
}

#[derive(Clone, Copy)]
struct Side<T> {
    target: Target,
    /// +1 for an upper side (`g = a`), -1 for a lower side (`g = -a`).
    sign: T,
    h: T,
    binding: Binding,
}

/// Reduced problem after removing fixed variables.
struct Reduced<T> {
    free: Vec<usize>,
    x_full: Vec<T>,
    p: SymMatrix<T>,
    q: Vec<T>,
    rows: Vec<SparseRow<T>>,
    sides: Vec<Side<T>>,
    eq_rows: Vec<(SparseRow<T>, T, u32)>,
}

fn presolve<T: Real>(prob: &QpProblem<T>) -> Result<Reduced<T>, Vec<Binding>> {
    let n = prob.n();
    let fix_tol = T::lit(1e-12);
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    let mut x_full = vec![T::zero(); n];
    for i in 0..n {
        if prob.lb[i] > prob.ub[i] + fix_tol {
            return Err(vec![Binding::LowerBound(i), Binding::UpperBound(i)]);
        }
        if (prob.ub[i] - prob.lb[i]).abs() <= fix_tol {
            x_full[i] = prob.lb[i];
        } else {
            map[i] = free.len();
            free.push(i);
        }
    }
    let m = free.len();
    let mut p = SymMatrix::zeros(m);
    let mut q = vec![T::zero(); m];
    for (a, &i) in free.iter().enumerate() {
        let mut qi = prob.q[i];
        for j in 0..n {
            let pij = prob.p.get(i, j);
            if map[j] == usize::MAX {
                qi += pij * x_full[j];
            } else {
                p.data[a * m + map[j]] = pij;
            }
        }
        q[a] = qi;
    }
    let mut sides = Vec::new();
    for (a, &i) in free.iter().enumerate() {
        if prob.lb[i].is_finite() {
            sides.push(Side { target: Target::Var(a), sign: -T::one(), h: -prob.lb[i], binding: Binding::LowerBound(i) });
        }
        if prob.ub[i].is_finite() {
            sides.push(Side { target: Target::Var(a), sign: T::one(), h: prob.ub[i], binding: Binding::UpperBound(i) });
        }
    }
    let mut rows = Vec::new();
    let mut eq_rows = Vec::new();
    for r in &prob.rows {
        let mut red = SparseRow::new();
        let mut shift = T::zero();
        for (&i, &v) in r.row.idx.iter().zip(&r.row.val) {
            if map[i] == usize::MAX {
                shift += v * x_full[i];
            } else {
                red.push(map[i], v);
            }
        }
        let (lo, hi) = (r.lower - shift, r.upper - shift);
        if red.idx.is_empty() {
            let tol = T::lit(1e-9);
            if lo > tol {
                return Err(vec![Binding::RowLower(r.tag)]);
            }
            if hi < -tol {
                return Err(vec![Binding::RowUpper(r.tag)]);
            }
            continue;
        }
        if lo > hi + fix_tol {
            return Err(vec![Binding::RowLower(r.tag), Binding::RowUpper(r.tag)]);
        }
        if (hi - lo).abs() <= fix_tol {
            eq_rows.push((red, lo, r.tag));
            continue;
        }
        let k = rows.len();
        if lo.is_finite() {
            sides.push(Side { target: Target::Row(k), sign: -T::one(), h: -lo, binding: Binding::RowLower(r.tag) });
        }
        if hi.is_finite() {
            sides.push(Side { target: Target::Row(k), sign: T::one(), h: hi, binding: Binding::RowUpper(r.tag) });
        }
        rows.push(red);
    }
    Ok(Reduced { free, x_full, p, q, rows, sides, eq_rows })
}

struct Work<T> {
    ax: Vec<T>,
}

impl<T: Real> Reduced<T> {
    fn g_dot(&self, side: &Side<T>, x: &[T], work: &Work<T>) -> T {
        match side.target {
            Target::Var(i) => side.sign * x[i],
            Target::Row(r) => side.sign * work.ax[r],
        }
    }

    fn row_products(&self, x: &[T]) -> Work<T> {
        Work { ax: self.rows.iter().map(|r| r.dot(x)).collect() }
    }

    /// `out += Gᵀ v`.
    fn add_gt(&self, v: &[T], out: &mut [T]) {
        for (side, &vk) in self.sides.iter().zip(v) {
            let c = side.sign * vk;
            match side.target {
                Target::Var(i) => out[i] += c,
                Target::Row(r) => {
                    let row = &self.rows[r];
                    for (&i, &a) in row.idx.iter().zip(&row.val) {
                        out[i] += c * a;
                    }
                }
            }
        }
    }

    fn dual_residual(&self, x: &[T], y: &[T], z: &[T]) -> Vec<T> {
        let mut rd = self.p.mul_vec(x);
        for (r, q) in rd.iter_mut().zip(&self.q) {
            *r += *q;
        }
        for ((row, _, _), &yk) in self.eq_rows.iter().zip(y) {
            for (&i, &a) in row.idx.iter().zip(&row.val) {
                rd[i] += a * yk;
            }
        }
        self.add_gt(z, &mut rd);
        rd
    }

    /// Max-norm KKT residual at `(x, y, z)`: stationarity, primal
    /// feasibility, dual sign and complementarity with the true slacks.
    fn kkt(&self, x: &[T], y: &[T], z: &[T]) -> T {
        let rd = self.dual_residual(x, y, z);
        let mut res = max_abs(&rd);
        let work = self.row_products(x);
        for (side, &zk) in self.sides.iter().zip(z) {
            let slack = side.h - self.g_dot(side, x, &work);
            res = res.max((-slack).max(T::zero()));
            res = res.max((-zk).max(T::zero()));
            res = res.max((zk.max(T::zero()) * slack.max(T::zero())).abs());
        }
        for (row, b, _) in &self.eq_rows {
            res = res.max((row.dot(x) - *b).abs());
        }
        res
    }

    fn expand(&self, x: &[T]) -> Vec<T> {
        let mut full = self.x_full.clone();
        for (a, &i) in self.free.iter().enumerate() {
            full[i] = x[a];
        }
        full
    }
}

fn max_step<T: Real>(v: &[T], dv: &[T]) -> T {
    let mut a = T::one();
    for (&vi, &di) in v.iter().zip(dv) {
        if di < T::zero() {
            a = a.min(-vi / di);
        }
    }
    a
}

/// Solves the QP. Never panics on infeasible or ill-posed input; the
/// outcome is carried by [`QpSolution::status`].
pub fn solve<T: Real>(prob: &QpProblem<T>, opts: &QpOptions<T>) -> QpSolution<T> {
    let red = match presolve(prob) {
        Ok(r) => r,
        Err(binding) => {
            let x = prob.lb.iter().zip(&prob.ub).map(|(&l, &u)| if l.is_finite() { l } else if u.is_finite() { u } else { T::zero() }).collect::<Vec<_>>();
            return QpSolution {
                objective: prob.objective(&x),
                x,
                kkt_residual: T::infinity(),
                iterations: 0,
                status: QpStatus::Infeasible { binding },
            };
        }
    };
    let (x, kkt, iterations, status) = interior_point(&red, opts);
    let x = red.expand(&x);
    QpSolution { objective: prob.objective(&x), x, kkt_residual: kkt, iterations, status }
}

fn interior_point<T: Real>(red: &Reduced<T>, opts: &QpOptions<T>) -> (Vec<T>, T, usize, QpStatus) {
    let n = red.free.len();
    let m = red.sides.len();
    let ne = red.eq_rows.len();
    let one = T::one();
    let zero = T::zero();

    // Start at the box midpoint (or a bound offset) with unit duals.
    let mut x = vec![zero; n];
    {
        let mut lo = vec![T::neg_infinity(); n];
        let mut hi = vec![T::infinity(); n];
        for s in &red.sides {
            if let Target::Var(i) = s.target {
                if s.sign > zero {
                    hi[i] = s.h;
                } else {
                    lo[i] = -s.h;
                }
            }
        }
        for i in 0..n {
            x[i] = match (lo[i].is_finite(), hi[i].is_finite()) {
                (true, true) => T::lit(0.5) * (lo[i] + hi[i]),
                (true, false) => lo[i] + one,
                (false, true) => hi[i] - one,
                _ => zero,
            };
        }
    }
    let mut y = vec![zero; ne];
    let work = red.row_products(&x);
    let mut s: Vec<T> = red.sides.iter().map(|sd| (sd.h - red.g_dot(sd, &x, &work)).max(one)).collect();
    let mut z = vec![one; m];

    if m == 0 && ne == 0 {
        // Unconstrained: single Newton step.
        let mut mat = red.p.clone();
        regularize(&mut mat);
        if let Some(ch) = Cholesky::factor(&mat) {
            let rhs: Vec<T> = red.q.iter().map(|&v| -v).collect();
            x = ch.solve(&rhs);
        }
        let k = red.kkt(&x, &y, &z);
        let status = if k <= opts.tol { QpStatus::Solved } else { QpStatus::MaxIterations };
        return (x, k, 1, status);
    }

    // Numerical breakdown near the optimum still leaves a usable iterate.
    let settle = |k: T| if k <= opts.tol { QpStatus::Solved } else { QpStatus::MaxIterations };
    let inner_tol = opts.tol * T::lit(1e-2);
    let mu_tol = (inner_tol * inner_tol * T::lit(1e-2)).max(T::epsilon() * T::epsilon() * T::lit(1e12));
    let mu_loose = inner_tol;
    let mut polish = 0usize;
    let mut candidate: Option<(Vec<T>, T)> = None;
    let mut best = (x.clone(), y.clone(), z.clone(), T::infinity());
    let mut stall = 0usize;
    let mut last_primal = T::infinity();

    for iter in 0..opts.max_iter {
        let work = red.row_products(&x);
        // Residuals.
        let rd = red.dual_residual(&x, &y, &z);
        let re: Vec<T> = red.eq_rows.iter().map(|(row, b, _)| row.dot(&x) - *b).collect();
        let ri: Vec<T> = red
            .sides
            .iter()
            .zip(&s)
            .map(|(sd, &sk)| red.g_dot(sd, &x, &work) + sk - sd.h)
            .collect();
        let mu = if m > 0 { s.iter().zip(&z).map(|(&a, &b)| a * b).sum::<T>() / T::from_usize_lossy(m) } else { zero };

        let kkt = red.kkt(&x, &y, &z);
        if kkt < best.3 {
            best = (x.clone(), y.clone(), z.clone(), kkt);
        }
        let primal = max_abs(&ri).max(max_abs(&re));
        // Weakly active constraints leave the primal error at O(√μ), so once
        // the residual target is met μ keeps being driven down for a few
        // more steps while the residual holds.
        if kkt <= inner_tol && mu <= mu_loose {
            if mu <= mu_tol || polish >= 8 {
                return (x, kkt, iter, QpStatus::Solved);
            }
            polish += 1;
            candidate = Some((x.clone(), kkt));
        } else if let Some((cx, ck)) = candidate.take() {
            return (cx, ck, iter, QpStatus::Solved);
        }
        // Infeasibility: duals exploding while the primal residual stalls.
        let zmax = max_abs(&z);
        if primal > T::lit(1e-4) {
            if primal > last_primal * T::lit(0.999) {
                stall += 1;
            } else {
                stall = 0;
            }
        } else {
            stall = 0;
        }
        last_primal = primal;
        if (zmax > T::lit(1e12) && primal > T::lit(1e-4)) || stall >= 50 {
            return (best.0.clone(), best.3, iter, QpStatus::Infeasible { binding: top_binding(red, &y, &z) });
        }

        // Reduced Newton matrix M = P + GᵀWG.
        let w: Vec<T> = z.iter().zip(&s).map(|(&zk, &sk)| zk / sk).collect();
        let mut mat = red.p.clone();
        regularize(&mut mat);
        let mut row_w = vec![zero; red.rows.len()];
        for (sd, &wk) in red.sides.iter().zip(&w) {
            match sd.target {
                Target::Var(i) => mat.add(i, i, wk),
                Target::Row(r) => row_w[r] += wk,
            }
        }
        for (row, &wr) in red.rows.iter().zip(&row_w) {
            for (&i, &vi) in row.idx.iter().zip(&row.val) {
                let c = wr * vi;
                for (&j, &vj) in row.idx.iter().zip(&row.val) {
                    mat.data[i * n + j] += c * vj;
                }
            }
        }
        let chol = match Cholesky::factor(&mat) {
            Some(c) => c,
            None => {
                let mut m2 = mat.clone();
                let bump = T::lit(1e-8) * (one + diag_max(&m2));
                for i in 0..n {
                    m2.add(i, i, bump);
                }
                match Cholesky::factor(&m2) {
                    Some(c) => c,
                    None => return (best.0.clone(), best.3, iter, settle(best.3)),
                }
            }
        };
        // Schur complement of equality rows.
        let mut minv_et: Vec<Vec<T>> = Vec::with_capacity(ne);
        for (row, _, _) in &red.eq_rows {
            let mut e = vec![zero; n];
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                e[i] = v;
            }
            minv_et.push(chol.solve(&e));
        }
        let mut schur = SymMatrix::zeros(ne);
        for a in 0..ne {
            for b in 0..ne {
                schur.data[a * ne + b] = red.eq_rows[a].0.dot(&minv_et[b]);
            }
        }
        let schur_ch = if ne > 0 {
            let mut sc = schur.clone();
            regularize(&mut sc);
            Cholesky::factor(&sc)
        } else {
            None
        };

        let solve_dir = |rsz: &[T]| -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
            // rhs = -rd - Gᵀ S⁻¹ (Z ri - rsz)
            let tmp: Vec<T> = (0..m).map(|k| (z[k] * ri[k] - rsz[k]) / s[k]).collect();
            let mut rhs: Vec<T> = rd.iter().map(|&v| -v).collect();
            let mut gt = vec![zero; n];
            red.add_gt(&tmp, &mut gt);
            for i in 0..n {
                rhs[i] -= gt[i];
            }
            let mut dx = chol.solve(&rhs);
            let mut dy = vec![zero; ne];
            if ne > 0 {
                let t: Vec<T> = (0..ne).map(|a| red.eq_rows[a].0.dot(&dx) + re[a]).collect();
                dy = match &schur_ch {
                    Some(c) => c.solve(&t),
                    None => t.clone(),
                };
                for a in 0..ne {
                    for i in 0..n {
                        dx[i] -= minv_et[a][i] * dy[a];
                    }
                }
            }
            let wk = red.row_products(&dx);
            let mut ds = vec![zero; m];
            let mut dz = vec![zero; m];
            for (k, sd) in red.sides.iter().enumerate() {
                let gdx = red.g_dot(sd, &dx, &wk);
                ds[k] = -ri[k] - gdx;
                dz[k] = (-rsz[k] - z[k] * ds[k]) / s[k];
            }
            (dx, dy, ds, dz)
        };

        // Predictor.
        let rsz_aff: Vec<T> = s.iter().zip(&z).map(|(&a, &b)| a * b).collect();
        let (_, _, ds_a, dz_a) = solve_dir(&rsz_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if m > 0 {
            (0..m).map(|k| (s[k] + a_aff * ds_a[k]) * (z[k] + a_aff * dz_a[k])).sum::<T>() / T::from_usize_lossy(m)
        } else {
            zero
        };
        let sigma = if mu > zero { (mu_aff / mu).powi(3).min(one) } else { zero };
        // Corrector.
        let rsz: Vec<T> = (0..m).map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu).collect();
        let (dx, dy, ds, dz) = solve_dir(&rsz);
        let a = (T::lit(0.99) * max_step(&s, &ds).min(max_step(&z, &dz))).min(one);
        for i in 0..n {
            x[i] += a * dx[i];
        }
        for k in 0..ne {
            y[k] += a * dy[k];
        }
        let floor = T::min_positive_value().sqrt();
        for k in 0..m {
            s[k] = (s[k] + a * ds[k]).max(floor);
            z[k] = (z[k] + a * dz[k]).max(floor);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return (best.0.clone(), best.3, iter, settle(best.3));
        }
    }
    let (bx, _, _, bk) = best;
    (bx, bk, opts.max_iter, settle(bk))
}

fn diag_max<T: Real>(m: &SymMatrix<T>) -> T {
    (0..m.n).fold(T::zero(), |a, i| a.max(m.get(i, i).abs()))
}

fn regularize<T: Real>(m: &mut SymMatrix<T>) {
    let bump = T::lit(1e-13) * (T::one() + diag_max(m));
    for i in 0..m.n {
        m.add(i, i, bump);
    }
}

/// Constraints with the largest multipliers, most binding first.
fn top_binding<T: Real>(red: &Reduced<T>, y: &[T], z: &[T]) -> Vec<Binding> {
    let mut all: Vec<(T, Binding)> = red.sides.iter().zip(z).map(|(sd, &zk)| (zk, sd.binding)).collect();
    all.extend(red.eq_rows.iter().zip(y).map(|((_, _, tag), &yk)| (yk.abs(), Binding::Equality(*tag))));
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    all.into_iter().take(8).map(|(_, b)| b).collect()
}
