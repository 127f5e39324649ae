//! Dense linear programming with dual extraction.
//!
//! Problems have the inequality form
//!
//! ```text
//! min  c'x   s.t.  E x = e,  A x <= b,  x free
//! ```
//!
//! with few variables and possibly very many rows, which is the shape of a
//! scenario program. [`ActiveSetSolver`] is a primal active-set (simplex-type)
//! method whose working matrix is at most `n x n`: every iteration costs one
//! small QR factorization plus one pass over the rows. Large row counts are
//! handled by row generation: solve on a subset, add the most violated rows,
//! repeat. Rows left out of the final subset carry zero multipliers, so the
//! returned duals are valid for the full problem.
//!
//! Multipliers follow `c + E'nu + A'lambda = 0` with `lambda >= 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A block of dense rows, row-major.
#[derive(Debug, Clone, Default)]
pub struct Rows {
    pub n_cols: usize,
    pub coef: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl Rows {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            coef: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn with_capacity(n_cols: usize, rows: usize) -> Self {
        Self {
            n_cols,
            coef: Vec::with_capacity(rows * n_cols),
            rhs: Vec::with_capacity(rows),
        }
    }

    pub fn push(&mut self, coef: &[f64], rhs: f64) {
        assert_eq!(coef.len(), self.n_cols, "row width mismatch");
        self.coef.extend_from_slice(coef);
        self.rhs.push(rhs);
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coef[k * self.n_cols..(k + 1) * self.n_cols]
    }
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub eq: Rows,
    pub le: Rows,
    /// Inequality rows to start row generation with; typically the simple bounds.
    pub seed_rows: Vec<usize>,
}

impl LinearProgram {
    pub fn new(cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            cost,
            eq: Rows::new(n),
            le: Rows::new(n),
            seed_rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
    pub iterations: usize,
    /// For infeasible problems: inequality rows in the final phase-one working set.
    pub conflict_rows: Vec<usize>,
}

impl LpSolution {
    fn failed(status: LpStatus, lp: &LinearProgram, iterations: usize) -> Self {
        Self {
            status,
            x: vec![f64::NAN; lp.n_vars()],
            objective: f64::NAN,
            eq_duals: vec![0.0; lp.eq.len()],
            le_duals: vec![0.0; lp.le.len()],
            iterations,
            conflict_rows: Vec::new(),
        }
    }
}

/// Anything that can solve a [`LinearProgram`] and report per-row multipliers.
pub trait LpBackend: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> LpSolution;
}

#[derive(Debug, Clone)]
pub struct ActiveSetSolver {
    /// Primal feasibility tolerance on unit-normalized rows.
    pub feasibility_tol: f64,
    /// Multipliers above `-optimality_tol * (1 + |c|)` count as nonnegative.
    pub optimality_tol: f64,
    /// Use row generation once the inequality count exceeds this.
    pub row_generation_threshold: usize,
    pub max_iterations: usize,
    /// Relative relaxation applied to inequality bounds to break degenerate ties;
    /// undone by projecting onto the final active rows.
    pub perturbation: f64,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-10,
            row_generation_threshold: 400,
            max_iterations: 200_000,
            perturbation: 1e-10,
        }
    }
}

impl LpBackend for ActiveSetSolver {
    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        let (mut scaled, scale) = equilibrate_columns(lp);
        let exact_rhs = scaled.le.rhs.clone();
        relax_rows(&mut scaled.le, self.perturbation);
        let mut sol = if scaled.le.len() > self.row_generation_threshold {
            self.solve_row_generation(&scaled)
        } else {
            self.solve_dense(&scaled)
        };
        if sol.status == LpStatus::Optimal {
            scaled.le.rhs = exact_rhs;
            settle_on_active_rows(&scaled, &mut sol, self.feasibility_tol);
        }
        for (x, s) in sol.x.iter_mut().zip(&scale) {
            *x *= s;
        }
        sol
    }
}

/// Loosens each inequality by a small row-specific amount so ties between rows are broken.
fn relax_rows(rows: &mut Rows, relative: f64) {
    if relative <= 0.0 {
        return;
    }
    for k in 0..rows.len() {
        let norm = rows.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        // Fixed pseudo-random factor in [0.5, 1) per row index.
        let mut h = (k as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 31;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 29;
        let u = 0.5 + (h >> 11) as f64 / (1u64 << 54) as f64;
        rows.rhs[k] += relative * u * (norm + rows.rhs[k].abs());
    }
}

/// Moves `x` the least distance onto the rows carrying multipliers at their exact bounds,
/// keeping the move only if every row then holds.
fn settle_on_active_rows(lp: &LinearProgram, sol: &mut LpSolution, tol: f64) {
    let n = lp.n_vars();
    let active: Vec<usize> = (0..lp.le.len()).filter(|&k| sol.le_duals[k] > 0.0).collect();
    let m = lp.eq.len() + active.len();
    if m == 0 || m > n {
        return;
    }
    let a = DMatrix::from_fn(m, n, |r, c| {
        if r < lp.eq.len() {
            lp.eq.row(r)[c]
        } else {
            lp.le.row(active[r - lp.eq.len()])[c]
        }
    });
    let x = DVector::from_column_slice(&sol.x);
    let target = DVector::from_iterator(
        m,
        (0..lp.eq.len())
            .map(|k| lp.eq.rhs[k])
            .chain(active.iter().map(|&k| lp.le.rhs[k])),
    );
    let resid = target - &a * &x;
    let Some(y) = (&a * a.transpose()).lu().solve(&resid) else {
        return;
    };
    let moved = x + a.transpose() * y;
    let holds = (0..lp.le.len()).all(|k| {
        let row = lp.le.row(k);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot(row, moved.as_slice()) - lp.le.rhs[k] <= tol * norm.max(1.0)
    });
    if holds && moved.iter().all(|v| v.is_finite()) {
        sol.x = moved.iter().copied().collect();
        sol.objective = dot(&lp.cost, &sol.x);
    }
}

/// Substitutes `x = diag(scale) y` so every column's largest coefficient is 1.
fn equilibrate_columns(lp: &LinearProgram) -> (LinearProgram, Vec<f64>) {
    let n = lp.n_vars();
    let mut peak = vec![0.0_f64; n];
    for rows in [&lp.eq, &lp.le] {
        for k in 0..rows.len() {
            for (p, v) in peak.iter_mut().zip(rows.row(k)) {
                *p = p.max(v.abs());
            }
        }
    }
    let scale: Vec<f64> = peak
        .iter()
        .map(|&p| if p > 0.0 { 1.0 / p } else { 1.0 })
        .collect();
    let rescale = |rows: &Rows| {
        let mut out = rows.clone();
        for k in 0..rows.len() {
            for j in 0..n {
                out.coef[k * n + j] *= scale[j];
            }
        }
        out
    };
    let scaled = LinearProgram {
        cost: lp.cost.iter().zip(&scale).map(|(c, s)| c * s).collect(),
        eq: rescale(&lp.eq),
        le: rescale(&lp.le),
        seed_rows: lp.seed_rows.clone(),
    };
    (scaled, scale)
}

/// Unit-normalized copy of a row block. Zero rows keep their scale of 0.
struct Normalized {
    n: usize,
    coef: Vec<f64>,
    rhs: Vec<f64>,
    scale: Vec<f64>,
}

impl Normalized {
    fn from_rows(rows: &Rows, pick: Option<&[usize]>) -> Self {
        let n = rows.n_cols;
        let idx: Vec<usize> = match pick {
            Some(p) => p.to_vec(),
            None => (0..rows.len()).collect(),
        };
        let mut coef = Vec::with_capacity(idx.len() * n);
        let mut rhs = Vec::with_capacity(idx.len());
        let mut scale = Vec::with_capacity(idx.len());
        for &k in &idx {
            let row = rows.row(k);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                coef.extend(row.iter().map(|v| v / norm));
                rhs.push(rows.rhs[k] / norm);
            } else {
                coef.extend(std::iter::repeat(0.0).take(n));
                rhs.push(rows.rhs[k]);
            }
            scale.push(norm);
        }
        Self {
            n,
            coef,
            rhs,
            scale,
        }
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.coef[k * self.n..(k + 1) * self.n]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum CoreOutcome {
    Optimal,
    Unbounded(Vec<f64>),
    Stalled,
}

struct CoreResult {
    outcome: CoreOutcome,
    x: Vec<f64>,
    /// Indices into the combined row list (equalities first).
    working: Vec<usize>,
    multipliers: Vec<f64>,
    iterations: usize,
}

/// Active-set iterations from a feasible `x0`.
///
/// `rows`/`rhs` hold `n_eq` equalities followed by inequalities, all normalized.
/// Equalities stay in the working set throughout.
struct ActiveSet<'a> {
    n: usize,
    rows: &'a [f64],
    rhs: &'a [f64],
    n_eq: usize,
    cost: &'a [f64],
    opt_tol: f64,
    max_iter: usize,
}

impl ActiveSet<'_> {
    fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.n..(k + 1) * self.n]
    }

    fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    fn working_matrix(&self, working: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, working.len(), |r, c| self.row(working[c])[r])
    }

    fn run(&self, x0: Vec<f64>) -> CoreResult {
        let n = self.n;
        let m = self.n_rows();
        let c = DVector::from_column_slice(self.cost);
        let c_norm = c.norm();
        let mut x = x0;
        let mut working: Vec<usize> = (0..self.n_eq).collect();
        let mut in_working = vec![false; m];
        for k in 0..self.n_eq {
            in_working[k] = true;
        }
        let mut ax: Vec<f64> = (0..m).map(|k| dot(self.row(k), &x)).collect();
        let mut skipped = vec![false; m];
        let mut degenerate_run = 0usize;
        let mut bland = false;

        for iter in 0..self.max_iter {
            if iter % 64 == 63 {
                for k in 0..m {
                    ax[k] = dot(self.row(k), &x);
                }
            }
            let (q, r) = if working.is_empty() {
                (DMatrix::<f64>::zeros(n, 0), DMatrix::<f64>::zeros(0, 0))
            } else {
                let qr = self.working_matrix(&working).qr();
                (qr.q(), qr.r())
            };
            let tiny: Vec<usize> = (0..r.ncols()).filter(|&i| r[(i, i)].abs() < 1e-9).collect();
            if working.len() > self.n_eq && tiny == [working.len() - 1] {
                // The row just added is numerically dependent on the working set;
                // it stays satisfied but is not kept as a defining constraint.
                let k = working.pop().expect("non-empty working set");
                in_working[k] = false;
                skipped[k] = true;
                continue;
            }
            if !tiny.is_empty() {
                return CoreResult {
                    outcome: CoreOutcome::Stalled,
                    x,
                    working,
                    multipliers: Vec::new(),
                    iterations: iter,
                };
            }

            // Pull x back onto the working constraints.
            if !working.is_empty() {
                let resid = DVector::from_iterator(
                    working.len(),
                    working.iter().map(|&k| self.rhs[k] - ax[k]),
                );
                if resid.amax() > 0.0 {
                    if let Some(y) = r.transpose().solve_lower_triangular(&resid) {
                        let delta = &q * y;
                        for i in 0..n {
                            x[i] += delta[i];
                        }
                        for k in 0..m {
                            ax[k] += dot(self.row(k), delta.as_slice());
                        }
                    }
                }
            }

            let qtc = q.transpose() * &c;
            let c_perp = &c - &q * &qtc;
            let perp = c_perp.norm();

            if perp > 1e-9 * c_norm.max(1.0) {
                let d: Vec<f64> = c_perp.iter().map(|v| -v / perp).collect();
                let mut best: Option<(usize, f64, f64)> = None;
                let mut ad_all = vec![0.0; m];
                for k in self.n_eq..m {
                    let ad = dot(self.row(k), &d);
                    ad_all[k] = ad;
                    if in_working[k] || skipped[k] || ad <= 1e-10 {
                        continue;
                    }
                    let step = (self.rhs[k] - ax[k]).max(0.0) / ad;
                    let take = match best {
                        None => true,
                        Some((_, bs, bad)) => {
                            if bland {
                                step < bs - 1e-15
                            } else {
                                step < bs - 1e-15 || (step <= bs + 1e-15 && ad > bad)
                            }
                        }
                    };
                    if take {
                        best = Some((k, step, ad));
                    }
                }
                let Some((k, step, _)) = best else {
                    return CoreResult {
                        outcome: CoreOutcome::Unbounded(d),
                        x,
                        working,
                        multipliers: Vec::new(),
                        iterations: iter,
                    };
                };
                for i in 0..n {
                    x[i] += step * d[i];
                }
                for j in 0..m {
                    ax[j] += step * ad_all[j];
                }
                working.push(k);
                in_working[k] = true;
                if step <= 1e-13 {
                    degenerate_run += 1;
                    if degenerate_run > 3 * n + 10 {
                        bland = true;
                    }
                } else {
                    degenerate_run = 0;
                    bland = false;
                }
                continue;
            }

            // Stationary on the working face: check multiplier signs.
            let rhs = -qtc;
            let lambda = match r.solve_upper_triangular(&rhs) {
                Some(l) => l,
                None => {
                    return CoreResult {
                        outcome: CoreOutcome::Stalled,
                        x,
                        working,
                        multipliers: Vec::new(),
                        iterations: iter,
                    };
                }
            };
            let threshold = -self.opt_tol * (1.0 + c_norm);
            let mut drop: Option<(usize, f64)> = None;
            for (pos, &k) in working.iter().enumerate() {
                if k < self.n_eq || lambda[pos] >= threshold {
                    continue;
                }
                let better = match drop {
                    None => true,
                    Some((p, v)) => {
                        if bland {
                            k < working[p]
                        } else {
                            lambda[pos] < v
                        }
                    }
                };
                if better {
                    drop = Some((pos, lambda[pos]));
                }
            }
            match drop {
                None => {
                    return CoreResult {
                        outcome: CoreOutcome::Optimal,
                        x,
                        multipliers: lambda.iter().copied().collect(),
                        working,
                        iterations: iter,
                    };
                }
                Some((pos, _)) => {
                    let k = working.remove(pos);
                    in_working[k] = false;
                    skipped.fill(false);
                }
            }
        }
        CoreResult {
            outcome: CoreOutcome::Stalled,
            x,
            working,
            multipliers: Vec::new(),
            iterations: self.max_iter,
        }
    }
}

/// Least-norm solution of the equality block, or zeros without equalities.
fn equality_point(n: usize, eq: &Normalized) -> Option<Vec<f64>> {
    if eq.len() == 0 {
        return Some(vec![0.0; n]);
    }
    let e = DMatrix::from_fn(eq.len(), n, |r, c| eq.row(r)[c]);
    let rhs = DVector::from_column_slice(&eq.rhs);
    let gram = &e * e.transpose();
    let y = gram.lu().solve(&rhs)?;
    let x = e.transpose() * y;
    let resid = (&e * &x - &rhs).amax();
    if resid > 1e-8 * (1.0 + rhs.amax()) {
        return None;
    }
    Some(x.iter().copied().collect())
}

impl ActiveSetSolver {
    /// Solves with every row present; `start` is an optional initial guess.
    pub fn solve_dense(&self, lp: &LinearProgram) -> LpSolution {
        self.solve_dense_from(lp, None)
    }

    fn solve_dense_from(&self, lp: &LinearProgram, start: Option<&[f64]>) -> LpSolution {
        let n = lp.n_vars();
        let eq = Normalized::from_rows(&lp.eq, None);
        let le = Normalized::from_rows(&lp.le, None);
        let tol = self.feasibility_tol;

        // Zero rows are either vacuous or immediately infeasible.
        for k in 0..le.len() {
            if le.scale[k] == 0.0 && le.rhs[k] < -tol {
                let mut sol = LpSolution::failed(LpStatus::Infeasible, lp, 0);
                sol.conflict_rows = vec![k];
                return sol;
            }
        }
        if (0..eq.len()).any(|k| eq.scale[k] == 0.0 && eq.rhs[k].abs() > tol) {
            return LpSolution::failed(LpStatus::Infeasible, lp, 0);
        }
        let eq_live: Vec<usize> = (0..eq.len()).filter(|&k| eq.scale[k] > 0.0).collect();
        let le_live: Vec<usize> = (0..le.len()).filter(|&k| le.scale[k] > 0.0).collect();

        let eq_sub = Normalized {
            n,
            coef: eq_live.iter().flat_map(|&k| eq.row(k).to_vec()).collect(),
            rhs: eq_live.iter().map(|&k| eq.rhs[k]).collect(),
            scale: eq_live.iter().map(|&k| eq.scale[k]).collect(),
        };

        let mut x0 = match equality_point(n, &eq_sub) {
            Some(x) => x,
            None => return LpSolution::failed(LpStatus::Infeasible, lp, 0),
        };
        if let Some(s) = start {
            // Project the guess onto the equality set.
            let e = DMatrix::from_fn(eq_sub.len(), n, |r, c| eq_sub.row(r)[c]);
            let guess = DVector::from_column_slice(s);
            if eq_sub.len() > 0 {
                let resid = DVector::from_column_slice(&eq_sub.rhs) - &e * &guess;
                if let Some(y) = (&e * e.transpose()).lu().solve(&resid) {
                    let corrected = guess + e.transpose() * y;
                    x0 = corrected.iter().copied().collect();
                }
            } else {
                x0 = s.to_vec();
            }
        }

        let max_violation = le_live
            .iter()
            .map(|&k| dot(le.row(k), &x0) - le.rhs[k])
            .fold(0.0_f64, f64::max);
        let rhs_scale = 1.0 + le.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let mut iterations = 0;

        let x_feasible = if max_violation <= tol {
            x0
        } else {
            // Phase one on (x, t): min t, a_k x - t <= b_k, t >= 0.
            let n1 = n + 1;
            let s2 = std::f64::consts::FRAC_1_SQRT_2;
            let mut rows = Vec::with_capacity((eq_sub.len() + le_live.len() + 1) * n1);
            let mut rhs = Vec::with_capacity(eq_sub.len() + le_live.len() + 1);
            for k in 0..eq_sub.len() {
                rows.extend_from_slice(eq_sub.row(k));
                rows.push(0.0);
                rhs.push(eq_sub.rhs[k]);
            }
            for &k in &le_live {
                rows.extend(le.row(k).iter().map(|v| v * s2));
                rows.push(-s2);
                rhs.push(le.rhs[k] * s2);
            }
            rows.extend(std::iter::repeat(0.0).take(n));
            rows.push(-1.0);
            rhs.push(0.0);
            let mut cost = vec![0.0; n1];
            cost[n] = 1.0;
            let mut start = x0.clone();
            start.push(max_violation * 1.0000001 + tol);
            let core = ActiveSet {
                n: n1,
                rows: &rows,
                rhs: &rhs,
                n_eq: eq_sub.len(),
                cost: &cost,
                opt_tol: self.optimality_tol,
                max_iter: self.max_iterations,
            };
            let res = core.run(start);
            iterations += res.iterations;
            match res.outcome {
                CoreOutcome::Optimal => {}
                _ => return LpSolution::failed(LpStatus::NumericalFailure, lp, iterations),
            }
            let t = res.x[n];
            if t > 1e-9 * rhs_scale {
                let mut sol = LpSolution::failed(LpStatus::Infeasible, lp, iterations);
                sol.conflict_rows = res
                    .working
                    .iter()
                    .zip(&res.multipliers)
                    .filter(|(&k, &mu)| {
                        k >= eq_sub.len() && k < eq_sub.len() + le_live.len() && mu.abs() > 1e-12
                    })
                    .map(|(&k, _)| le_live[k - eq_sub.len()])
                    .collect();
                sol.conflict_rows.sort_unstable();
                return sol;
            }
            res.x[..n].to_vec()
        };

        // Phase two.
        let mut rows = Vec::with_capacity((eq_sub.len() + le_live.len()) * n);
        let mut rhs = Vec::with_capacity(eq_sub.len() + le_live.len());
        rows.extend_from_slice(&eq_sub.coef);
        rhs.extend_from_slice(&eq_sub.rhs);
        for &k in &le_live {
            rows.extend_from_slice(le.row(k));
            rhs.push(le.rhs[k]);
        }
        let core = ActiveSet {
            n,
            rows: &rows,
            rhs: &rhs,
            n_eq: eq_sub.len(),
            cost: &lp.cost,
            opt_tol: self.optimality_tol,
            max_iter: self.max_iterations,
        };
        let res = core.run(x_feasible);
        iterations += res.iterations;
        match res.outcome {
            CoreOutcome::Optimal => {}
            CoreOutcome::Unbounded(_) => {
                let mut sol = LpSolution::failed(LpStatus::Unbounded, lp, iterations);
                sol.x = res.x;
                return sol;
            }
            CoreOutcome::Stalled => {
                return LpSolution::failed(LpStatus::NumericalFailure, lp, iterations)
            }
        }

        let mut eq_duals = vec![0.0; lp.eq.len()];
        let mut le_duals = vec![0.0; lp.le.len()];
        for (&k, &mu) in res.working.iter().zip(&res.multipliers) {
            if k < eq_sub.len() {
                let orig = eq_live[k];
                eq_duals[orig] = mu / eq.scale[orig];
            } else {
                let orig = le_live[k - eq_sub.len()];
                le_duals[orig] = mu.max(0.0) / le.scale[orig];
            }
        }
        let objective = dot(&lp.cost, &res.x);
        LpSolution {
            status: LpStatus::Optimal,
            x: res.x,
            objective,
            eq_duals,
            le_duals,
            iterations,
            conflict_rows: Vec::new(),
        }
    }

    /// Row generation over the inequality block.
    pub fn solve_row_generation(&self, lp: &LinearProgram) -> LpSolution {
        let n = lp.n_vars();
        let m = lp.le.len();
        let full = Normalized::from_rows(&lp.le, None);
        let tol = self.feasibility_tol;
        let batch = (2 * n).max(32);

        let mut in_set = vec![false; m];
        let mut subset: Vec<usize> = Vec::new();
        for &k in &lp.seed_rows {
            if k < m && !in_set[k] {
                in_set[k] = true;
                subset.push(k);
            }
        }
        let mut start: Option<Vec<f64>> = None;
        let mut iterations = 0;

        loop {
            let mut sub = LinearProgram::new(lp.cost.clone());
            sub.eq = lp.eq.clone();
            let mut le = Rows::with_capacity(n, subset.len());
            for &k in &subset {
                le.push(lp.le.row(k), lp.le.rhs[k]);
            }
            sub.le = le;
            let sol = self.solve_dense_from(&sub, start.as_deref());
            iterations += sol.iterations;

            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => {
                    let mut out = LpSolution::failed(LpStatus::Infeasible, lp, iterations);
                    out.conflict_rows = sol.conflict_rows.iter().map(|&j| subset[j]).collect();
                    out.conflict_rows.sort_unstable();
                    return out;
                }
                LpStatus::Unbounded => {
                    // Block the ray with the first full-problem row it hits.
                    let x = &sol.x;
                    let d = match self.recession_direction(&sub, x) {
                        Some(d) => d,
                        None => return LpSolution::failed(LpStatus::NumericalFailure, lp, iterations),
                    };
                    let mut best: Option<(usize, f64)> = None;
                    for k in 0..m {
                        if in_set[k] || full.scale[k] == 0.0 {
                            continue;
                        }
                        let ad = dot(full.row(k), &d);
                        if ad <= 1e-12 {
                            continue;
                        }
                        let step = (full.rhs[k] - dot(full.row(k), x)).max(0.0) / ad;
                        if best.map_or(true, |(_, s)| step < s) {
                            best = Some((k, step));
                        }
                    }
                    match best {
                        None => {
                            let mut out = LpSolution::failed(LpStatus::Unbounded, lp, iterations);
                            out.x = sol.x.clone();
                            return out;
                        }
                        Some((k, _)) => {
                            in_set[k] = true;
                            subset.push(k);
                            start = Some(sol.x.clone());
                            continue;
                        }
                    }
                }
                LpStatus::NumericalFailure => {
                    return LpSolution::failed(LpStatus::NumericalFailure, lp, iterations)
                }
            }

            let mut violated: Vec<(usize, f64)> = (0..m)
                .filter(|&k| !in_set[k])
                .filter_map(|k| {
                    let v = dot(full.row(k), &sol.x) - full.rhs[k];
                    (v > tol).then_some((k, v))
                })
                .collect();
            if violated.is_empty() {
                let mut le_duals = vec![0.0; m];
                for (j, &k) in subset.iter().enumerate() {
                    le_duals[k] = sol.le_duals[j];
                }
                return LpSolution {
                    status: LpStatus::Optimal,
                    objective: sol.objective,
                    x: sol.x,
                    eq_duals: sol.eq_duals,
                    le_duals,
                    iterations,
                    conflict_rows: Vec::new(),
                };
            }
            violated.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(k, _) in violated.iter().take(batch) {
                in_set[k] = true;
                subset.push(k);
            }
            start = Some(sol.x);
        }
    }

    /// Improving direction of an unbounded problem, by re-running phase two.
    fn recession_direction(&self, lp: &LinearProgram, x: &[f64]) -> Option<Vec<f64>> {
        let n = lp.n_vars();
        let eq = Normalized::from_rows(&lp.eq, None);
        let le = Normalized::from_rows(&lp.le, None);
        let live: Vec<usize> = (0..le.len()).filter(|&k| le.scale[k] > 0.0).collect();
        let mut rows = eq.coef.clone();
        let mut rhs = eq.rhs.clone();
        for &k in &live {
            rows.extend_from_slice(le.row(k));
            rhs.push(le.rhs[k]);
        }
        let core = ActiveSet {
            n,
            rows: &rows,
            rhs: &rhs,
            n_eq: eq.len(),
            cost: &lp.cost,
            opt_tol: self.optimality_tol,
            max_iter: self.max_iterations,
        };
        match core.run(x.to_vec()).outcome {
            CoreOutcome::Unbounded(d) => Some(d),
            _ => None,
        }
    }
}
