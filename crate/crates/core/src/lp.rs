//! Linear programs over non-negative variables and a revised primal simplex
//! solver with an explicit dense basis inverse.
//!
//! Pricing uses the most negative reduced cost and switches to Bland's
//! smallest-index rule while pivots are degenerate, which rules out
//! cycling. Problems are maximized.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub kind: RowKind,
    pub rhs: f64,
    pub coeffs: Vec<(usize, f64)>,
}

/// `max objective·x` subject to the rows and `x ≥ 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LpProblem {
    pub name: String,
    pub col_names: Vec<String>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LpProblem {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Adds a column; names must be unique.
    pub fn add_col(&mut self, name: impl Into<String>, obj: f64) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate column {name}")));
        }
        let j = self.col_names.len();
        self.index.insert(name.clone(), j);
        self.col_names.push(name);
        self.objective.push(obj);
        Ok(j)
    }

    /// Adds a row; repeated column entries are summed and zeros dropped.
    pub fn add_row(&mut self, name: impl Into<String>, kind: RowKind, rhs: f64, coeffs: Vec<(usize, f64)>) -> usize {
        let mut coeffs = coeffs;
        coeffs.sort_by_key(|c| c.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for (j, a) in coeffs {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|c| c.1 != 0.0);
        self.rows.push(Row {
            name: name.into(),
            kind,
            rhs,
            coeffs: merged,
        });
        self.rows.len() - 1
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_cols(&self) -> usize {
        self.col_names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite objective coefficient".into()));
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("row {} has non-finite rhs", r.name)));
            }
            for &(j, a) in &r.coeffs {
                if j >= self.num_cols() || !a.is_finite() {
                    return Err(Error::InvalidArgument(format!("row {} has a bad entry", r.name)));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    pub fn row_activity(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Largest violation of any row or sign constraint by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, &v| w.max(-v));
        for (i, r) in self.rows.iter().enumerate() {
            let ax = self.row_activity(i, x);
            let v = match r.kind {
                RowKind::Le => ax - r.rhs,
                RowKind::Ge => r.rhs - ax,
                RowKind::Eq => (ax - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Fixed-format MPS. Columns and rows are renamed `C<n>` / `R<n>` to fit
    /// eight characters; the objective is negated since MPS minimizes.
    pub fn write_mps<W: Write>(&self, mut out: W) -> Result<()> {
        let cname = |j: usize| format!("C{j:07}");
        let rname = |i: usize| format!("R{i:07}");
        writeln!(out, "* {} ({} cols, {} rows); objective negated for minimization", self.name, self.num_cols(), self.num_rows())?;
        writeln!(out, "NAME          {}", truncate8(&self.name))?;
        writeln!(out, "ROWS")?;
        writeln!(out, " N  OBJ")?;
        for (i, r) in self.rows.iter().enumerate() {
            let k = match r.kind {
                RowKind::Le => "L",
                RowKind::Ge => "G",
                RowKind::Eq => "E",
            };
            writeln!(out, " {k}  {}", rname(i))?;
        }
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_cols()];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                by_col[j].push((i, a));
            }
        }
        writeln!(out, "COLUMNS")?;
        for j in 0..self.num_cols() {
            if self.objective[j] != 0.0 {
                writeln!(out, "    {:<8}  {:<8}  {:>12}", cname(j), "OBJ", fmt_num(-self.objective[j]))?;
            }
            for &(i, a) in &by_col[j] {
                writeln!(out, "    {:<8}  {:<8}  {:>12}", cname(j), rname(i), fmt_num(a))?;
            }
        }
        writeln!(out, "RHS")?;
        for (i, r) in self.rows.iter().enumerate() {
            if r.rhs != 0.0 {
                writeln!(out, "    {:<8}  {:<8}  {:>12}", "RHS", rname(i), fmt_num(r.rhs))?;
            }
        }
        writeln!(out, "ENDATA")?;
        Ok(())
    }
}

fn truncate8(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).take(8).collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 12 {
        s
    } else {
        format!("{v:.5e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PivotRule {
    /// Smallest eligible index throughout.
    Bland,
    /// Most negative reduced cost, Bland while stalled on degenerate pivots.
    Dantzig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub rule: PivotRule,
    pub max_iterations: usize,
    /// Feasibility and optimality tolerance.
    pub tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub stall_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rule: PivotRule::Dantzig,
            max_iterations: 1_000_000,
            tol: 1e-9,
            stall_limit: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub phase_one_iterations: usize,
    pub refactorizations: usize,
    pub primal_residual: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// Row prices of the maximization problem.
    pub duals: Vec<f64>,
    pub stats: SolveStats,
}

/// Smallest pivot element accepted in ratio tests and basis repairs.
const PIVOT_TOL: f64 = 1e-9;

/// Basic values below this magnitude are treated as degenerate zeros.
const ZERO_TOL: f64 = 1e-11;

/// Relative size of the right-hand side shift used against degeneracy.
const PERTURBATION: f64 = 1e-7;

/// Standard form `A x = b, x ≥ 0, b ≥ 0` with slack and artificial
/// columns appended after the structural ones.
struct Standard {
    m: usize,
    n_struct: usize,
    n: usize,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    b: Vec<f64>,
    row_sign: Vec<f64>,
    artificial_from: usize,
    initial_basis: Vec<usize>,
}

impl Standard {
    fn build(p: &LpProblem) -> Self {
        let m = p.num_rows();
        let n_struct = p.num_cols();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_struct];
        let mut row_sign = vec![1.0; m];
        let mut b = vec![0.0; m];
        let mut kinds = Vec::with_capacity(m);
        for (i, r) in p.rows.iter().enumerate() {
            let s = if r.rhs < 0.0 { -1.0 } else { 1.0 };
            row_sign[i] = s;
            b[i] = r.rhs * s;
            for &(j, a) in &r.coeffs {
                cols[j].push((i, a * s));
            }
            kinds.push(match (r.kind, s < 0.0) {
                (RowKind::Le, false) | (RowKind::Ge, true) => RowKind::Le,
                (RowKind::Ge, false) | (RowKind::Le, true) => RowKind::Ge,
                (RowKind::Eq, _) => RowKind::Eq,
            });
        }
        let mut initial_basis = vec![usize::MAX; m];
        for (i, k) in kinds.iter().enumerate() {
            match k {
                RowKind::Le => {
                    initial_basis[i] = cols.len();
                    cols.push(vec![(i, 1.0)]);
                }
                RowKind::Ge => cols.push(vec![(i, -1.0)]),
                RowKind::Eq => {}
            }
        }
        let artificial_from = cols.len();
        for i in 0..m {
            if initial_basis[i] == usize::MAX {
                initial_basis[i] = cols.len();
                cols.push(vec![(i, 1.0)]);
            }
        }
        let n = cols.len();
        let mut col_start = Vec::with_capacity(n + 1);
        let mut col_row = Vec::new();
        let mut col_val = Vec::new();
        col_start.push(0);
        for c in cols {
            for (i, a) in c {
                col_row.push(i);
                col_val.push(a);
            }
            col_start.push(col_row.len());
        }
        Self {
            m,
            n_struct,
            n,
            col_start,
            col_row,
            col_val,
            b,
            row_sign,
            artificial_from,
            initial_basis,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.col_start[j], self.col_start[j + 1]);
        self.col_row[s..e].iter().copied().zip(self.col_val[s..e].iter().copied())
    }
}

struct Simplex<'a> {
    sf: &'a Standard,
    opts: SolverOptions,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    /// Working right-hand side, shifted while degeneracy is perturbed away.
    b: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    refactorizations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded(usize),
}

impl<'a> Simplex<'a> {
    fn new(sf: &'a Standard, opts: SolverOptions) -> Self {
        let m = sf.m;
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut is_basic = vec![false; sf.n];
        for &j in &sf.initial_basis {
            is_basic[j] = true;
        }
        Self {
            sf,
            opts,
            basis: sf.initial_basis.clone(),
            is_basic,
            binv,
            b: sf.b.clone(),
            xb: sf.b.clone(),
            iterations: 0,
            since_refactor: 0,
            refactorizations: 0,
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.sf.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, b) in y.iter_mut().zip(row) {
                    *yk += cb * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, cost: &[f64], y: &[f64], j: usize) -> f64 {
        cost[j] - self.sf.col(j).map(|(i, a)| y[i] * a).sum::<f64>()
    }

    fn ftran(&self, j: usize, out: &mut [f64]) {
        let m = self.sf.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, a) in self.sf.col(j) {
            for i in 0..m {
                out[i] += self.binv[i * m + r] * a;
            }
        }
    }

    /// Recomputes the basis inverse by Gauss-Jordan with partial pivoting.
    fn refactor(&mut self) -> Result<()> {
        let m = self.sf.m;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, v) in self.sf.col(j) {
                a[i * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))
                .expect("non-empty range");
            if a[p * m + c].abs() < 1e-13 {
                return Err(Error::Numeric("singular basis".into()));
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = a[r * m + c];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    a[r * m + k] -= f * a[c * m + k];
                    inv[r * m + k] -= f * inv[c * m + k];
                }
            }
        }
        self.binv = inv;
        for i in 0..m {
            self.xb[i] = (0..m).map(|k| self.binv[i * m + k] * self.b[k]).sum();
        }
        self.snap_zeros();
        self.since_refactor = 0;
        self.refactorizations += 1;
        Ok(())
    }

    /// Rounds basic values within `ZERO_TOL` of zero to exactly zero, so
    /// degenerate ties stay exact and Bland's rule cannot cycle on noise.
    fn snap_zeros(&mut self) {
        for x in &mut self.xb {
            if x.abs() < ZERO_TOL {
                *x = 0.0;
            }
        }
    }

    /// Lifts basic values by a small random amount and moves the working
    /// right-hand side to match. Artificials stay put unless `artificials`.
    fn perturb(&mut self, seed: u64, artificials: bool) {
        let m = self.sf.m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..m {
            if artificials || self.basis[i] < self.sf.artificial_from {
                self.xb[i] += PERTURBATION * (1.0 + self.xb[i].abs()) * rng.gen_range(1.0..2.0);
            }
        }
        let mut b = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, a) in self.sf.col(j) {
                b[i] += a * self.xb[k];
            }
        }
        self.b = b;
    }

    /// Restores the true right-hand side and repairs any primal
    /// infeasibility it exposes with dual simplex pivots.
    fn unperturb(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<()> {
        self.b = self.sf.b.clone();
        self.refactor()?;
        let m = self.sf.m;
        let mut alpha = vec![0.0; m];
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::Numeric(format!("simplex hit {} iterations", self.iterations)));
            }
            if self.since_refactor >= m.max(64) {
                self.refactor()?;
            }
            let Some(r) = (0..m)
                .filter(|&i| self.xb[i] < -self.opts.tol)
                .min_by(|&a, &b| self.xb[a].total_cmp(&self.xb[b]))
            else {
                return Ok(());
            };
            let y = self.duals(cost);
            let rho = &self.binv[r * m..(r + 1) * m];
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..self.sf.n {
                if self.is_basic[j] || !allowed(j) {
                    continue;
                }
                let a: f64 = self.sf.col(j).map(|(i, v)| rho[i] * v).sum();
                if a >= -PIVOT_TOL {
                    continue;
                }
                let ratio = self.reduced_cost(cost, &y, j).max(0.0) / -a;
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => ratio < br - ZERO_TOL || (ratio <= br + ZERO_TOL && a.abs() > ba),
                };
                if better {
                    enter = Some((j, ratio, a.abs()));
                }
            }
            let Some((q, _, _)) = enter else {
                return Err(Error::Infeasible { residual: -self.xb[r] });
            };
            self.ftran(q, &mut alpha);
            self.pivot(r, q, &alpha);
        }
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.sf.m;
        let theta = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * alpha[i];
            }
        }
        self.xb[r] = theta;
        self.snap_zeros();
        let ar = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= ar;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        for (i, row) in before.chunks_exact_mut(m).chain(after.chunks_exact_mut(m)).enumerate() {
            let i = if i < r { i } else { i + 1 };
            let f = alpha[i];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *x -= f * p;
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    /// With `pin_artificials`, basic artificial columns (left at zero level by
    /// redundant rows) block any step that would move them off zero.
    fn run(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool, pin_artificials: bool) -> Result<PhaseEnd> {
        let m = self.sf.m;
        let refactor_every = m.max(64);
        let mut alpha = vec![0.0; m];
        let mut stalled = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::Numeric(format!("simplex hit {} iterations", self.iterations)));
            }
            if self.since_refactor >= refactor_every {
                self.refactor()?;
            }
            let y = self.duals(cost);
            let bland = self.opts.rule == PivotRule::Bland || stalled >= self.opts.stall_limit;
            let mut entering = None;
            let mut best = -self.opts.tol;
            for j in 0..self.sf.n {
                if self.is_basic[j] || !allowed(j) {
                    continue;
                }
                let d = self.reduced_cost(cost, &y, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            self.ftran(q, &mut alpha);
            // Harris two-pass ratio test: bound the step with slightly
            // relaxed feasibility, then take the largest pivot within it.
            // Bland keeps exact minimum-ratio ties.
            let slack = if bland { 0.0 } else { self.opts.tol };
            let art = self.sf.artificial_from;
            let pinned = |i: usize, a: f64| pin_artificials && self.basis[i] >= art && a.abs() > PIVOT_TOL;
            let mut bound = f64::INFINITY;
            for i in 0..m {
                if pinned(i, alpha[i]) {
                    bound = 0.0;
                } else if alpha[i] > PIVOT_TOL {
                    bound = bound.min((self.xb[i].max(0.0) + slack) / alpha[i]);
                }
            }
            if bland {
                bound += 1e-12;
            }
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..m {
                let ratio = if pinned(i, alpha[i]) {
                    0.0
                } else if alpha[i] > PIVOT_TOL {
                    self.xb[i].max(0.0) / alpha[i]
                } else {
                    continue;
                };
                if ratio > bound {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some(l) if bland => self.basis[i] < self.basis[l],
                    Some(l) => alpha[i].abs() > alpha[l].abs(),
                };
                if better {
                    leave = Some(i);
                    best_ratio = ratio;
                }
            }
            let Some(r) = leave else {
                return Ok(PhaseEnd::Unbounded(q));
            };
            if best_ratio <= 1e-12 {
                stalled += 1;
            } else {
                stalled = 0;
            }
            self.pivot(r, q, &alpha);
        }
    }
}

/// Solves `problem` to optimality.
pub fn solve(problem: &LpProblem, opts: SolverOptions) -> Result<LpSolution> {
    problem.validate()?;
    let sf = Standard::build(problem);
    let m = sf.m;
    let mut s = Simplex::new(&sf, opts);
    let scale = 1.0 + sf.b.iter().fold(0.0f64, |a, b| a.max(*b));

    let mut phase_one_iterations = 0;
    if sf.artificial_from < sf.n {
        let cost1: Vec<f64> = (0..sf.n).map(|j| if j >= sf.artificial_from { 1.0 } else { 0.0 }).collect();
        s.perturb(0xfea5, true);
        for round in 0..2 {
            match s.run(&cost1, &|_| true, false)? {
                PhaseEnd::Optimal => {}
                PhaseEnd::Unbounded(_) => return Err(Error::Numeric("phase one reported unbounded".into())),
            }
            if round == 0 {
                s.unperturb(&cost1, &|_| true)?;
            }
        }
        let residual: f64 = (0..m)
            .filter(|&i| s.basis[i] >= sf.artificial_from)
            .map(|i| s.xb[i].max(0.0))
            .sum();
        if residual > opts.tol * scale * 10.0 {
            return Err(Error::Infeasible { residual });
        }
        // drive zero-level artificials out of the basis where possible
        let mut alpha = vec![0.0; m];
        for r in 0..m {
            if s.basis[r] < sf.artificial_from {
                continue;
            }
            let row: Vec<f64> = s.binv[r * m..(r + 1) * m].to_vec();
            let pick = (0..sf.artificial_from)
                .filter(|&j| !s.is_basic[j])
                .map(|j| (j, sf.col(j).map(|(i, a)| row[i] * a).sum::<f64>().abs()))
                .filter(|&(_, v)| v > PIVOT_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(j, _)| j);
            if let Some(q) = pick {
                s.ftran(q, &mut alpha);
                s.xb[r] = 0.0;
                s.pivot(r, q, &alpha);
            }
        }
        phase_one_iterations = s.iterations;
    }

    let mut cost2 = vec![0.0; sf.n];
    for j in 0..sf.n_struct {
        cost2[j] = -problem.objective[j];
    }
    let art = sf.artificial_from;
    let allowed = |j: usize| j < art;
    s.perturb(0x5eed, false);
    for round in 0..2 {
        match s.run(&cost2, &allowed, true)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded(q) => {
                return Err(Error::Unbounded {
                    column: q.min(sf.n_struct.saturating_sub(1)),
                })
            }
        }
        if round == 0 {
            s.unperturb(&cost2, &allowed)?;
        }
    }
    s.refactor()?;

    let mut full = vec![0.0; sf.n];
    for i in 0..m {
        full[s.basis[i]] = s.xb[i].max(0.0);
    }
    let x = full[..sf.n_struct].to_vec();
    let y = s.duals(&cost2);
    let duals: Vec<f64> = (0..m).map(|i| -y[i] * sf.row_sign[i]).collect();
    let stats = certificate(problem, &x, &duals, s.iterations, phase_one_iterations, s.refactorizations);
    Ok(LpSolution {
        objective: problem.objective_value(&x),
        x,
        duals,
        stats,
    })
}

/// Residuals of primal feasibility, dual feasibility, complementary
/// slackness and the duality gap for a candidate primal-dual pair.
pub fn certificate(
    p: &LpProblem,
    x: &[f64],
    duals: &[f64],
    iterations: usize,
    phase_one_iterations: usize,
    refactorizations: usize,
) -> SolveStats {
    let mut reduced = p.objective.clone();
    for (i, r) in p.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            reduced[j] -= duals[i] * a;
        }
    }
    let mut dual_inf = reduced.iter().fold(0.0f64, |w, &r| w.max(r));
    let mut comp = x.iter().zip(&reduced).fold(0.0f64, |w, (x, r)| w.max((x * r).abs()));
    let mut dual_obj = 0.0;
    for (i, r) in p.rows.iter().enumerate() {
        let pi = duals[i];
        dual_inf = dual_inf.max(match r.kind {
            RowKind::Le => -pi,
            RowKind::Ge => pi,
            RowKind::Eq => 0.0,
        });
        comp = comp.max((pi * (r.rhs - p.row_activity(i, x))).abs());
        dual_obj += pi * r.rhs;
    }
    SolveStats {
        iterations,
        phase_one_iterations,
        refactorizations,
        primal_residual: p.max_violation(x),
        dual_infeasibility: dual_inf.max(0.0),
        complementarity: comp,
        duality_gap: (p.objective_value(x) - dual_obj).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textbook() -> LpProblem {
        let mut p = LpProblem::new("tiny");
        let x = p.add_col("x", 3.0).unwrap();
        let y = p.add_col("y", 2.0).unwrap();
        p.add_row("cap", RowKind::Le, 4.0, vec![(x, 1.0), (y, 1.0)]);
        p.add_row("xmax", RowKind::Le, 2.0, vec![(x, 1.0)]);
        p
    }

    #[test]
    fn textbook_optimum() {
        for rule in [PivotRule::Bland, PivotRule::Dantzig] {
            let s = solve(&textbook(), SolverOptions { rule, ..Default::default() }).unwrap();
            assert!((s.objective - 10.0).abs() < 1e-12);
            assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
            assert!((s.duals[0] - 2.0).abs() < 1e-12 && (s.duals[1] - 1.0).abs() < 1e-12);
            assert!(s.stats.complementarity < 1e-12 && s.stats.duality_gap < 1e-12);
        }
    }

    #[test]
    fn equality_and_ge_rows_use_phase_one() {
        let mut p = LpProblem::new("eq");
        let a = p.add_col("a", 1.0).unwrap();
        let b = p.add_col("b", -1.0).unwrap();
        p.add_row("sum", RowKind::Eq, 3.0, vec![(a, 1.0), (b, 1.0)]);
        p.add_row("bmin", RowKind::Ge, 1.0, vec![(b, 1.0)]);
        p.add_row("neg", RowKind::Le, -0.5, vec![(a, -1.0)]);
        let s = solve(&p, SolverOptions::default()).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12, "{s:?}");
        assert!(s.stats.primal_residual < 1e-12);
        assert!(s.stats.dual_infeasibility < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded_are_reported() {
        let mut p = LpProblem::new("inf");
        let a = p.add_col("a", 1.0).unwrap();
        p.add_row("lo", RowKind::Ge, 2.0, vec![(a, 1.0)]);
        p.add_row("hi", RowKind::Le, 1.0, vec![(a, 1.0)]);
        assert!(matches!(solve(&p, SolverOptions::default()), Err(Error::Infeasible { .. })));
        let mut q = LpProblem::new("unb");
        let a = q.add_col("a", 1.0).unwrap();
        let b = q.add_col("b", 0.0).unwrap();
        q.add_row("r", RowKind::Le, 1.0, vec![(a, 1.0), (b, -1.0)]);
        assert!(matches!(solve(&q, SolverOptions::default()), Err(Error::Unbounded { .. })));
    }

    #[test]
    fn degenerate_redundant_rows_terminate() {
        // Beale's cycling example for the largest-coefficient rule, plus a
        // duplicated row.
        let mut p = LpProblem::new("beale");
        let c = [0.75, -150.0, 0.02, -6.0];
        let cols: Vec<usize> = (0..4).map(|j| p.add_col(format!("x{j}"), c[j]).unwrap()).collect();
        let r1 = [0.25, -60.0, -0.04, 9.0];
        let r2 = [0.5, -90.0, -0.02, 3.0];
        for (k, r) in [r1, r2, r1].iter().enumerate() {
            p.add_row(format!("r{k}"), RowKind::Le, 0.0, cols.iter().map(|&j| (j, r[j])).collect());
        }
        p.add_row("x2cap", RowKind::Le, 1.0, vec![(cols[2], 1.0)]);
        for rule in [PivotRule::Bland, PivotRule::Dantzig] {
            let s = solve(&p, SolverOptions { rule, ..Default::default() }).unwrap();
            assert!((s.objective - 0.05).abs() < 1e-12, "{rule:?}: {}", s.objective);
        }
        let mut e = LpProblem::new("dup");
        let a = e.add_col("a", 1.0).unwrap();
        e.add_row("r0", RowKind::Eq, 1.0, vec![(a, 1.0)]);
        e.add_row("r1", RowKind::Eq, 1.0, vec![(a, 1.0)]);
        assert!((solve(&e, SolverOptions::default()).unwrap().objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_rejected_and_entries_merged() {
        let mut p = LpProblem::new("m");
        let a = p.add_col("a", 1.0).unwrap();
        assert!(p.add_col("a", 2.0).is_err());
        p.add_row("r", RowKind::Le, 1.0, vec![(a, 0.5), (a, 0.5)]);
        assert_eq!(p.rows[0].coeffs, vec![(a, 1.0)]);
        assert_eq!(p.col("a"), Some(a));
    }

    #[test]
    fn mps_names_fit_fixed_fields() {
        let mut buf = Vec::new();
        textbook().write_mps(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("NAME          tiny"));
        assert!(text.contains(" L  R0000000"));
        assert!(text.contains("    C0000000  OBJ"));
        assert!(text.trim_end().ends_with("ENDATA"));
    }
}
