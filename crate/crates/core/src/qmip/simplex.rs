//! Dense bounded-variable primal simplex.
//!
//! Solves `max c.x` subject to rows `a.x {<=,>=,=} b` and `l <= x <= u`,
//! where bounds may be infinite. Each row gets a slack with sign-encoded
//! bounds; rows whose slack cannot absorb the starting residual get an
//! artificial. Phase 1 maximizes minus the artificial sum, phase 2 the real
//! objective. Pricing is Dantzig with a Bland fallback after a run of
//! degenerate pivots. The final basic solution gets one refinement pass
//! against the original rows.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Sparse row `sum coeffs <sense> rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearConstraint<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

impl<T: Scalar> LinearConstraint<T> {
    pub fn new(coeffs: Vec<(usize, T)>, sense: Sense, rhs: T) -> Self {
        Self { coeffs, sense, rhs }
    }

    pub fn lhs(&self, x: &[T]) -> T {
        self.coeffs.iter().fold(T::zero(), |s, &(j, a)| s + a * x[j])
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[T]) -> T {
        let v = self.lhs(x) - self.rhs;
        match self.sense {
            Sense::Le => v.max(T::zero()),
            Sense::Ge => (-v).max(T::zero()),
            Sense::Eq => v.abs(),
        }
    }
}

/// A linear program in maximization form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub rows: Vec<LinearConstraint<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions<T> {
    /// Reduced-cost optimality tolerance.
    pub dual_tol: T,
    /// Bound and row feasibility tolerance.
    pub primal_tol: T,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot_tol: T,
    /// `None` picks `50 (m + n) + 1000`.
    pub max_iterations: Option<usize>,
}

impl<T: Scalar> Default for LpOptions<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        Self {
            dual_tol: eps.powf(T::of(0.55)),
            primal_tol: eps.powf(T::of(0.55)),
            pivot_tol: eps.powf(T::of(0.7)),
            max_iterations: None,
        }
    }
}

/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

struct Tableau<T> {
    m: usize,
    n_total: usize,
    /// `B^-1 A`, row-major `m x n_total`.
    t: Vec<T>,
    basis: Vec<usize>,
    /// Row of each basic variable.
    row_of: Vec<Option<usize>>,
    x: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl<T: Scalar> Tableau<T> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.t[i * self.n_total + j]
    }

    fn pivot(&mut self, p: usize, q: usize, d: &mut [T]) {
        let n = self.n_total;
        let piv = self.at(p, q);
        let inv = T::one() / piv;
        for v in &mut self.t[p * n..(p + 1) * n] {
            *v *= inv;
        }
        let (before, rest) = self.t.split_at_mut(p * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[q];
            if f != T::zero() {
                for (r, &pv) in row.iter_mut().zip(prow.iter()) {
                    *r -= f * pv;
                }
                row[q] = T::zero();
            }
        }
        let f = d[q];
        if f != T::zero() {
            for (dj, &pv) in d.iter_mut().zip(prow.iter()) {
                *dj -= f * pv;
            }
            d[q] = T::zero();
        }
        let leaving = self.basis[p];
        self.row_of[leaving] = None;
        self.basis[p] = q;
        self.row_of[q] = Some(p);
    }

    fn reduced_costs(&self, c: &[T]) -> Vec<T> {
        let mut d = c.to_vec();
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != T::zero() {
                let row = &self.t[i * self.n_total..(i + 1) * self.n_total];
                for (dj, &a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for &b in &self.basis {
            d[b] = T::zero();
        }
        d
    }

    /// Runs primal simplex iterations for objective `c` until optimality.
    fn optimize(&mut self, c: &[T], opts: &LpOptions<T>, max_iter: usize) -> Outcome {
        let mut d = self.reduced_costs(c);
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Outcome::IterationLimit;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            // entering variable
            let mut q = usize::MAX;
            let mut best = T::zero();
            for j in 0..self.n_total {
                if self.row_of[j].is_some() || self.upper[j] - self.lower[j] <= T::zero() {
                    continue;
                }
                let dj = d[j];
                let can_up = dj > opts.dual_tol && self.x[j] < self.upper[j];
                let can_down = dj < -opts.dual_tol && self.x[j] > self.lower[j];
                if can_up || can_down {
                    if bland {
                        q = j;
                        break;
                    }
                    if dj.abs() > best {
                        best = dj.abs();
                        q = j;
                    }
                }
            }
            if q == usize::MAX {
                return Outcome::Optimal;
            }
            let dir = if d[q] > T::zero() { T::one() } else { -T::one() };

            // ratio test
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_piv = T::zero();
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha.abs() <= opts.pivot_tol {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * alpha;
                let (limit, to_upper) = if rate < T::zero() {
                    if self.lower[b].is_infinite() {
                        continue;
                    }
                    (((self.x[b] - self.lower[b]) / -rate).max(T::zero()), false)
                } else {
                    if self.upper[b].is_infinite() {
                        continue;
                    }
                    (((self.upper[b] - self.x[b]) / rate).max(T::zero()), true)
                };
                let take = match leave {
                    None => limit < step,
                    Some((r, _)) if bland => limit < step || (limit == step && b < self.basis[r]),
                    Some(_) => {
                        limit < step - opts.pivot_tol
                            || (limit <= step + opts.pivot_tol && alpha.abs() > leave_piv)
                    }
                };
                if take {
                    step = step.min(limit);
                    leave = Some((i, to_upper));
                    leave_piv = alpha.abs();
                }
            }
            if step.is_infinite() {
                return Outcome::Unbounded;
            }
            self.iterations += 1;
            if step <= opts.primal_tol {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // move along the edge
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha != T::zero() {
                    let b = self.basis[i];
                    self.x[b] -= dir * step * alpha;
                }
            }
            match leave {
                None => {
                    // bound flip
                    self.x[q] = if dir > T::zero() { self.upper[q] } else { self.lower[q] };
                }
                Some((p, to_upper)) => {
                    let b = self.basis[p];
                    self.x[q] += dir * step;
                    self.x[b] = if to_upper { self.upper[b] } else { self.lower[b] };
                    self.pivot(p, q, &mut d);
                }
            }
        }
    }
}

/// Solves `lp` to optimality (maximization).
pub fn solve_lp<T: Scalar>(lp: &LinearProgram<T>, opts: &LpOptions<T>) -> LpSolution<T> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    debug_assert_eq!(lp.lower.len(), n);
    debug_assert_eq!(lp.upper.len(), n);
    let inf = T::infinity();

    for j in 0..n {
        if lp.lower[j] > lp.upper[j] + opts.primal_tol {
            return infeasible(n);
        }
    }

    let mut lower: Vec<T> = lp.lower.clone();
    let mut upper: Vec<T> = lp.upper.iter().zip(&lp.lower).map(|(&u, &l)| u.max(l)).collect();
    let mut x: Vec<T> = (0..n)
        .map(|j| {
            if lower[j].is_finite() {
                lower[j]
            } else if upper[j].is_finite() {
                upper[j]
            } else {
                T::zero()
            }
        })
        .collect();
    for r in &lp.rows {
        let (l, u) = match r.sense {
            Sense::Le => (T::zero(), inf),
            Sense::Ge => (-inf, T::zero()),
            Sense::Eq => (T::zero(), T::zero()),
        };
        lower.push(l);
        upper.push(u);
        x.push(T::zero());
    }

    // residuals decide which rows need an artificial
    let mut needs_art = Vec::new();
    let mut init_col = vec![0usize; m];
    let mut init_sign = vec![T::one(); m];
    let mut basic_val = vec![T::zero(); m];
    for (i, r) in lp.rows.iter().enumerate() {
        let res = r.rhs - r.lhs(&x);
        let s = n + i;
        if res >= lower[s] && res <= upper[s] {
            init_col[i] = s;
            basic_val[i] = res;
        } else {
            needs_art.push(i);
            basic_val[i] = res.abs();
            init_sign[i] = if res >= T::zero() { T::one() } else { -T::one() };
        }
    }
    let k = needs_art.len();
    let n_total = n + m + k;
    for (a, &i) in needs_art.iter().enumerate() {
        init_col[i] = n + m + a;
        lower.push(T::zero());
        upper.push(inf);
        x.push(T::zero());
    }

    let mut t = vec![T::zero(); m * n_total];
    for (i, r) in lp.rows.iter().enumerate() {
        let sg = init_sign[i];
        let row = &mut t[i * n_total..(i + 1) * n_total];
        for &(j, a) in &r.coeffs {
            row[j] += sg * a;
        }
        row[n + i] = sg;
        if init_col[i] >= n + m {
            row[init_col[i]] = T::one();
        }
    }
    let mut row_of = vec![None; n_total];
    for i in 0..m {
        row_of[init_col[i]] = Some(i);
        x[init_col[i]] = basic_val[i];
    }
    let mut tab = Tableau {
        m,
        n_total,
        t,
        basis: init_col.clone(),
        row_of,
        x,
        lower,
        upper,
        iterations: 0,
    };
    let max_iter = opts.max_iterations.unwrap_or(50 * (m + n) + 1000);

    if k > 0 {
        let mut c1 = vec![T::zero(); n_total];
        for c in c1.iter_mut().skip(n + m) {
            *c = -T::one();
        }
        match tab.optimize(&c1, opts, max_iter) {
            Outcome::Optimal => {}
            Outcome::IterationLimit => return limit(n, &tab, lp),
            Outcome::Unbounded => unreachable!("phase 1 objective is bounded"),
        }
        let infeas: T = tab.x[n + m..].iter().copied().sum();
        let scale = T::one() + lp.rows.iter().fold(T::zero(), |s, r| s.max(r.rhs.abs()));
        if infeas > opts.primal_tol * scale {
            return LpSolution { iterations: tab.iterations, ..infeasible(n) };
        }
        for a in n + m..n_total {
            tab.lower[a] = T::zero();
            tab.upper[a] = T::zero();
        }
        // drive artificials out of the basis where a structural or slack pivot exists
        let mut dummy = vec![T::zero(); n_total];
        for p in 0..m {
            if tab.basis[p] < n + m {
                continue;
            }
            let mut q = None;
            let mut best = opts.pivot_tol.max(T::of(1e-9));
            for j in 0..n + m {
                let a = tab.at(p, j).abs();
                if tab.row_of[j].is_none() && a > best {
                    best = a;
                    q = Some(j);
                }
            }
            if let Some(q) = q {
                let art = tab.basis[p];
                let delta = tab.x[art] / tab.at(p, q);
                for i in 0..m {
                    let alpha = tab.at(i, q);
                    if alpha != T::zero() {
                        let b = tab.basis[i];
                        tab.x[b] -= delta * alpha;
                    }
                }
                tab.x[q] += delta;
                tab.x[art] = T::zero();
                tab.pivot(p, q, &mut dummy);
            }
        }
    }

    let mut c2 = vec![T::zero(); n_total];
    c2[..n].copy_from_slice(&lp.objective);
    let status = match tab.optimize(&c2, opts, max_iter) {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => LpStatus::IterationLimit,
    };

    refine(&mut tab, lp, &init_col, &init_sign, n);
    let xs = tab.x[..n].to_vec();
    LpSolution {
        status,
        objective: dot(&lp.objective, &xs),
        x: xs,
        iterations: tab.iterations,
    }
}

/// One pass of `x_B += B^-1 (b - A x)`. `B^-1` is read off the tableau
/// columns of the initial (signed identity) basis.
fn refine<T: Scalar>(tab: &mut Tableau<T>, lp: &LinearProgram<T>, init_col: &[usize], init_sign: &[T], n: usize) {
    let m = tab.m;
    let resid: Vec<T> = lp
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut lhs = r.lhs(&tab.x) + tab.x[n + i];
            if init_col[i] >= n + m {
                lhs += init_sign[i] * tab.x[init_col[i]];
            }
            r.rhs - lhs
        })
        .collect();
    for p in 0..m {
        let mut corr = T::zero();
        for (i, &ri) in resid.iter().enumerate() {
            if ri != T::zero() {
                corr += init_sign[i] * tab.at(p, init_col[i]) * ri;
            }
        }
        let b = tab.basis[p];
        tab.x[b] += corr;
    }
    // basic values drift within tolerance of their bounds; snap back
    for j in 0..n {
        tab.x[j] = tab.x[j].max(lp.lower[j]).min(lp.upper[j].max(lp.lower[j]));
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn infeasible<T: Scalar>(n: usize) -> LpSolution<T> {
    LpSolution {
        status: LpStatus::Infeasible,
        x: vec![T::zero(); n],
        objective: T::neg_infinity(),
        iterations: 0,
    }
}

fn limit<T: Scalar>(n: usize, tab: &Tableau<T>, lp: &LinearProgram<T>) -> LpSolution<T> {
    let xs = tab.x[..n].to_vec();
    LpSolution {
        status: LpStatus::IterationLimit,
        objective: dot(&lp.objective, &xs),
        x: xs,
        iterations: tab.iterations,
    }
}
