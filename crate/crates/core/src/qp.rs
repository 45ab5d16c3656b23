//! Dense convex quadratic programs with box bounds and linear equalities:
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A x = b
//!                  l <= x <= u
//! ```
//!
//! Solved with a primal active-set method. A feasible starting vertex comes
//! from a least-squares phase 1 on `|A x - b|^2` over the box. Each iteration
//! solves the equality-constrained subproblem on the free variables through
//! the KKT system; `Q` is only required to be positive semidefinite, so the
//! subproblem may be unbounded along a zero-curvature direction, in which
//! case the iterate moves along that direction until a bound blocks.
//!
//! Pivoting is deterministic: the most negative bound multiplier leaves the
//! working set, the first blocking bound enters, ties go to the lower index.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Fitted weights at or below this are set to zero before renormalizing.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        let dims = [
            ("Q rows", q.nrows()),
            ("Q cols", q.ncols()),
            ("A columns", a_eq.ncols()),
            ("lower bounds", lower.len()),
            ("upper bounds", upper.len()),
        ];
        for (context, found) in dims {
            if found != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    found,
                });
            }
        }
        if a_eq.nrows() != b_eq.len() {
            return Err(Error::DimensionMismatch {
                context: "equality right-hand side",
                expected: a_eq.nrows(),
                found: b_eq.len(),
            });
        }
        let all_finite = q
            .iter()
            .chain(c.iter())
            .chain(a_eq.iter())
            .chain(b_eq.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(domain!("non-finite problem data"));
        }
        for i in 0..n {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(domain!("bounds of variable {i} must be finite"));
            }
            if lower[i] > upper[i] {
                return Err(domain!("lower bound exceeds upper bound for variable {i}"));
            }
        }
        let q_norm = q.amax();
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-10 * q_norm.max(f64::MIN_POSITIVE) {
            return Err(domain!("Q is not symmetric (max asymmetry {asym:e})"));
        }
        if n > 0 && q_norm > 0.0 {
            let min_eig = q.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-8 * q_norm {
                return Err(domain!("Q is not positive semidefinite (eigenvalue {min_eig:e})"));
            }
        }
        Ok(Self {
            q,
            c,
            a_eq,
            b_eq,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Largest violation of stationarity, complementarity or feasibility,
    /// measured on the problem scaled to unit max-norm.
    pub kkt_residual: f64,
    /// Active-set changes, phase 1 included.
    pub iterations: usize,
    /// Objective after every phase-2 iteration, starting from the feasible point.
    pub objective_trace: Vec<f64>,
    /// First equality row left unsatisfied when infeasible.
    pub violated_row: Option<usize>,
}

/// Solve with the default iteration cap of `10 n²` active-set changes.
pub fn solve_default(problem: &QpProblem) -> QpSolution {
    let n = problem.dim().max(1);
    solve(problem, DEFAULT_TOL, 10 * n * n)
}

pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    let n = problem.dim();
    let (q, c) = normalized_objective(problem);
    let (a, b) = normalized_equalities(problem);

    // phase 1: least squares on the equality residual over the box
    let mut x = DVector::from_fn(n, |i, _| 0.0_f64.clamp(problem.lower[i], problem.upper[i]));
    let mut iterations = 0;
    if a.nrows() > 0 {
        let ata = a.transpose() * &a;
        let atb = -(a.transpose() * &b);
        let scale = ata.amax().max(atb.amax()).max(f64::MIN_POSITIVE);
        let phase1 = ActiveSet {
            q: &(ata / scale),
            c: &(atb / scale),
            a: &DMatrix::zeros(0, n),
            b: &DVector::zeros(0),
            lower: &problem.lower,
            upper: &problem.upper,
        };
        let run = phase1.run(x, tol, max_iter);
        iterations += run.iterations;
        x = run.x;
        let resid = &a * &x - &b;
        let worst = resid.iamax();
        let feas_tol = 1e-9 * (1.0 + b.amax());
        if resid.amax() > feas_tol {
            return QpSolution {
                objective: problem.objective(&x),
                x: x.iter().copied().collect(),
                status: QpStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                iterations,
                objective_trace: Vec::new(),
                violated_row: Some(worst),
            };
        }
    }

    let (a_ind, b_ind) = independent_rows(&a, &b);
    let phase2 = ActiveSet {
        q: &q,
        c: &c,
        a: &a_ind,
        b: &b_ind,
        lower: &problem.lower,
        upper: &problem.upper,
    };
    let run = phase2.run(x, tol, max_iter.saturating_sub(iterations));
    iterations += run.iterations;
    let status = if run.converged && run.kkt_residual <= tol {
        QpStatus::Converged
    } else {
        QpStatus::MaxIterations
    };
    QpSolution {
        objective: problem.objective(&run.x),
        x: run.x.iter().copied().collect(),
        status,
        kkt_residual: run.kkt_residual,
        iterations,
        objective_trace: run.trace.iter().map(|v| v * run_scale(problem)).collect(),
        violated_row: None,
    }
}

fn run_scale(problem: &QpProblem) -> f64 {
    let s = problem.q.amax().max(problem.c.amax());
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn normalized_objective(problem: &QpProblem) -> (DMatrix<f64>, DVector<f64>) {
    let s = run_scale(problem);
    (&problem.q / s, &problem.c / s)
}

fn normalized_equalities(problem: &QpProblem) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = problem.a_eq.clone();
    let mut b = problem.b_eq.clone();
    for r in 0..a.nrows() {
        let s = a.row(r).amax();
        if s > 0.0 {
            a.row_mut(r).scale_mut(1.0 / s);
            b[r] /= s;
        }
    }
    (a, b)
}

/// Greedily keep rows (in index order) that raise the rank.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut keep: Vec<usize> = Vec::new();
    for r in 0..a.nrows() {
        let mut trial = keep.clone();
        trial.push(r);
        if rank(&a.select_rows(trial.iter())) == trial.len() {
            keep = trial;
        }
    }
    (a.select_rows(keep.iter()), b.select_rows(keep.iter()))
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    let tol = 1e-10 * top * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

struct ActiveSet<'a> {
    q: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    lower: &'a DVector<f64>,
    upper: &'a DVector<f64>,
}

struct Run {
    x: DVector<f64>,
    converged: bool,
    kkt_residual: f64,
    iterations: usize,
    trace: Vec<f64>,
}

enum Step {
    /// Minimizer of the subproblem, with equality multipliers there.
    Newton { d: DVector<f64>, nu: DVector<f64> },
    /// Zero-curvature descent direction.
    Ray(DVector<f64>),
}

impl ActiveSet<'_> {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.q * x)) + self.c.dot(x)
    }

    fn run(&self, mut x: DVector<f64>, tol: f64, max_iter: usize) -> Run {
        let n = x.len();
        let mut state: Vec<Bound> = (0..n)
            .map(|i| {
                if self.lower[i] == self.upper[i] || x[i] <= self.lower[i] {
                    Bound::Lower
                } else if x[i] >= self.upper[i] {
                    Bound::Upper
                } else {
                    Bound::Free
                }
            })
            .collect();
        self.free_until_full_rank(&mut state);

        let mut trace = alloc::vec![self.objective(&x)];
        let mut iterations = 0;
        let mut refinements = 0;
        loop {
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
            let grad = self.q * &x + self.c;
            let resid = self.a * &x - self.b;
            match self.subproblem_step(&free, &grad, &resid) {
                Step::Ray(dir) => {
                    if iterations >= max_iter {
                        return self.finish(x, &state, false, iterations, trace);
                    }
                    iterations += 1;
                    let (alpha, blocking) = self.ratio_test(&x, &free, &dir, f64::INFINITY);
                    if let Some((i, bound)) = blocking {
                        self.take_step(&mut x, &free, &dir, alpha);
                        self.pin(&mut x, &mut state, i, bound);
                    } else {
                        // unbounded below; cannot happen with finite bounds
                        return self.finish(x, &state, false, iterations, trace);
                    }
                    trace.push(self.objective(&x));
                }
                Step::Newton { d, nu } => {
                    let step_norm = d.amax();
                    let (alpha, blocking) = self.ratio_test(&x, &free, &d, 1.0);
                    if let Some((i, bound)) = blocking.filter(|_| alpha < 1.0) {
                        if iterations >= max_iter {
                            return self.finish(x, &state, false, iterations, trace);
                        }
                        iterations += 1;
                        self.take_step(&mut x, &free, &d, alpha);
                        self.pin(&mut x, &mut state, i, bound);
                        trace.push(self.objective(&x));
                        continue;
                    }
                    if step_norm > 0.0 {
                        self.take_step(&mut x, &free, &d, 1.0);
                        for &i in &free {
                            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
                        }
                    }
                    let grad = self.q * &x + self.c;
                    let lambda = &grad + self.a.transpose() * &nu;
                    let mut worst: Option<(usize, f64)> = None;
                    for i in 0..n {
                        let violation = match state[i] {
                            Bound::Free => continue,
                            Bound::Lower if self.lower[i] == self.upper[i] => continue,
                            Bound::Lower => -lambda[i],
                            Bound::Upper => lambda[i],
                        };
                        if violation > tol && worst.is_none_or(|(_, w)| violation > w) {
                            worst = Some((i, violation));
                        }
                    }
                    match worst {
                        Some((i, _)) => {
                            if iterations >= max_iter {
                                return self.finish(x, &state, false, iterations, trace);
                            }
                            iterations += 1;
                            state[i] = Bound::Free;
                            trace.push(self.objective(&x));
                        }
                        None => {
                            let residual = self.kkt_residual(&x, &state);
                            if residual <= tol || refinements >= 3 {
                                return self.finish(x, &state, true, iterations, trace);
                            }
                            refinements += 1;
                        }
                    }
                }
            }
        }
    }

    fn finish(&self, x: DVector<f64>, state: &[Bound], converged: bool, iterations: usize, mut trace: Vec<f64>) -> Run {
        let kkt_residual = self.kkt_residual(&x, state);
        let last = self.objective(&x);
        if trace.last() != Some(&last) {
            trace.push(last);
        }
        Run {
            x,
            converged,
            kkt_residual,
            iterations,
            trace,
        }
    }

    /// Release pinned variables (lowest index first) until the free columns
    /// of `A` have full row rank, so the working set stays independent.
    fn free_until_full_rank(&self, state: &mut [Bound]) {
        let m = self.a.nrows();
        if m == 0 {
            return;
        }
        let cols = |state: &[Bound]| -> Vec<usize> { (0..state.len()).filter(|&i| state[i] == Bound::Free).collect() };
        let mut current = rank(&self.a.select_columns(cols(state).iter()));
        for i in 0..state.len() {
            if current >= m {
                break;
            }
            if state[i] == Bound::Free || self.lower[i] == self.upper[i] {
                continue;
            }
            let mut trial = cols(state);
            trial.push(i);
            trial.sort_unstable();
            let r = rank(&self.a.select_columns(trial.iter()));
            if r > current {
                state[i] = Bound::Free;
                current = r;
            }
        }
    }

    /// Solve the KKT system of the subproblem on `free` by a pseudo-inverse.
    fn subproblem_step(&self, free: &[usize], grad: &DVector<f64>, resid: &DVector<f64>) -> Step {
        let nf = free.len();
        let m = self.a.nrows();
        let n = grad.len();
        if nf == 0 {
            let nu = self.equality_multipliers(free, grad);
            return Step::Newton {
                d: DVector::zeros(n),
                nu,
            };
        }
        let dim = nf + m;
        let mut kkt = DMatrix::zeros(dim, dim);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                kkt[(r, s)] = self.q[(i, j)];
            }
            for e in 0..m {
                kkt[(nf + e, r)] = self.a[(e, i)];
                kkt[(r, nf + e)] = self.a[(e, i)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = -grad[i];
        }
        for e in 0..m {
            rhs[nf + e] = -resid[e];
        }

        let eig = kkt.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let cutoff = 1e-11 * top.max(1.0) * dim as f64;
        let mut sol = DVector::zeros(dim);
        let mut ray = DVector::zeros(nf);
        for k in 0..dim {
            let v = eig.eigenvectors.column(k);
            let coef = v.dot(&rhs);
            let lam = eig.eigenvalues[k];
            if lam.abs() > cutoff {
                sol.axpy(coef / lam, &v, 1.0);
            } else {
                ray.axpy(coef, &v.rows(0, nf), 1.0);
            }
        }
        let mut ray_full = DVector::zeros(n);
        for (r, &i) in free.iter().enumerate() {
            ray_full[i] = ray[r];
        }
        // slope of the objective along the ray is -|ray|^2 up to rounding
        let slope = grad.dot(&ray_full);
        if ray.amax() > 1e-9 && slope < 0.0 {
            let scale = ray_full.amax();
            return Step::Ray(ray_full / scale);
        }
        let mut d = DVector::zeros(n);
        for (r, &i) in free.iter().enumerate() {
            d[i] = sol[r];
        }
        let nu = DVector::from_iterator(m, (0..m).map(|e| sol[nf + e]));
        Step::Newton { d, nu }
    }

    /// Least-squares multipliers when no variable is free.
    fn equality_multipliers(&self, free: &[usize], grad: &DVector<f64>) -> DVector<f64> {
        let m = self.a.nrows();
        if m == 0 || free.is_empty() {
            return DVector::zeros(m);
        }
        let af = self.a.select_columns(free.iter());
        let gf = grad.select_rows(free.iter());
        af.transpose()
            .svd(true, true)
            .solve(&(-gf), 1e-12)
            .unwrap_or_else(|_| DVector::zeros(m))
    }

    /// Largest feasible step along `dir` over the free variables, capped at
    /// `cap`, and the first bound it hits.
    fn ratio_test(
        &self,
        x: &DVector<f64>,
        free: &[usize],
        dir: &DVector<f64>,
        cap: f64,
    ) -> (f64, Option<(usize, Bound)>) {
        let mut alpha = cap;
        let mut blocking = None;
        for &i in free {
            let di = dir[i];
            let (limit, bound) = if di < -1e-14 {
                ((self.lower[i] - x[i]) / di, Bound::Lower)
            } else if di > 1e-14 {
                ((self.upper[i] - x[i]) / di, Bound::Upper)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            if limit < alpha || (limit == alpha && blocking.is_none() && limit < f64::INFINITY) {
                alpha = limit;
                blocking = Some((i, bound));
            }
        }
        (alpha, blocking)
    }

    fn take_step(&self, x: &mut DVector<f64>, free: &[usize], dir: &DVector<f64>, alpha: f64) {
        for &i in free {
            x[i] += alpha * dir[i];
        }
    }

    fn pin(&self, x: &mut DVector<f64>, state: &mut [Bound], i: usize, bound: Bound) {
        x[i] = match bound {
            Bound::Upper => self.upper[i],
            _ => self.lower[i],
        };
        state[i] = bound;
    }

    fn kkt_residual(&self, x: &DVector<f64>, state: &[Bound]) -> f64 {
        let n = x.len();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let grad = self.q * x + self.c;
        let nu = self.equality_multipliers(&free, &grad);
        let lambda = &grad + self.a.transpose() * &nu;
        let mut worst = (self.a * x - self.b).amax();
        for i in 0..n {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
            let v = match state[i] {
                Bound::Free => lambda[i].abs(),
                Bound::Lower if self.lower[i] == self.upper[i] => 0.0,
                Bound::Lower => (-lambda[i]).max(0.0),
                Bound::Upper => lambda[i].max(0.0),
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Result of a simplex-constrained weighted least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFit {
    /// Weights renormalized to sum to exactly one.
    pub weights: Vec<f64>,
    /// `(t - P g)' W (t - P g)` at the returned weights.
    pub residual: f64,
    pub solution: QpSolution,
}

/// Additional equality rows `coefficients · g = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// `min (t - P g)' W (t - P g)` over `0 <= g <= 1`, `Σ g = 1`, plus `extra`.
///
/// `weight = None` means the identity.
pub fn simplex_ls(
    p: &DMatrix<f64>,
    target: &[f64],
    weight: Option<&DMatrix<f64>>,
    extra: &[LinearEquality],
) -> Result<SimplexFit> {
    let blocks = [LsBlock { p, target, weight }];
    let fit = stacked_simplex_ls(&blocks, extra)?;
    Ok(SimplexFit {
        weights: fit.weights.into_iter().next().unwrap_or_default(),
        residual: fit.residuals[0],
        solution: fit.solution,
    })
}

/// One block `(P, t, W)` of a stacked least-squares objective.
#[derive(Debug, Clone, Copy)]
pub struct LsBlock<'a> {
    pub p: &'a DMatrix<f64>,
    pub target: &'a [f64],
    pub weight: Option<&'a DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedFit {
    pub weights: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub solution: QpSolution,
}

/// Sum of per-block weighted residuals, each block's weights on its own
/// simplex; `extra` rows act on the concatenated weight vector.
pub fn stacked_simplex_ls(blocks: &[LsBlock<'_>], extra: &[LinearEquality]) -> Result<StackedFit> {
    let sizes: Vec<usize> = blocks.iter().map(|b| b.p.ncols()).collect();
    let n: usize = sizes.iter().sum();
    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut offset = 0;
    for block in blocks {
        let k = block.p.ncols();
        let j = block.p.nrows();
        if block.target.len() != j {
            return Err(Error::DimensionMismatch {
                context: "least-squares target",
                expected: j,
                found: block.target.len(),
            });
        }
        let w = match block.weight {
            Some(w) if w.shape() != (j, j) => {
                return Err(Error::DimensionMismatch {
                    context: "least-squares weight",
                    expected: j,
                    found: w.nrows(),
                })
            }
            Some(w) => w.clone(),
            None => DMatrix::identity(j, j),
        };
        let t = DVector::from_column_slice(block.target);
        let ptw = block.p.transpose() * &w;
        let mut qb = &ptw * block.p * 2.0;
        // symmetrize against rounding in the product
        qb = (&qb + qb.transpose()) * 0.5;
        q.view_mut((offset, offset), (k, k)).copy_from(&qb);
        c.rows_mut(offset, k).copy_from(&(&ptw * &t * -2.0));
        offset += k;
    }
    let rows = blocks.len() + extra.len();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    let mut offset = 0;
    for (r, &k) in sizes.iter().enumerate() {
        a.view_mut((r, offset), (1, k)).fill(1.0);
        b[r] = 1.0;
        offset += k;
    }
    for (e, eq) in extra.iter().enumerate() {
        if eq.coefficients.len() != n {
            return Err(Error::DimensionMismatch {
                context: "extra equality row",
                expected: n,
                found: eq.coefficients.len(),
            });
        }
        a.row_mut(blocks.len() + e).copy_from_slice(&eq.coefficients);
        b[blocks.len() + e] = eq.rhs;
    }
    let problem = QpProblem::new(q, c, a, b, DVector::zeros(n), DVector::from_element(n, 1.0))?;
    let solution = solve_default(&problem);
    match solution.status {
        QpStatus::Converged => {}
        QpStatus::Infeasible => {
            return Err(Error::Infeasible {
                row: solution.violated_row,
            })
        }
        QpStatus::MaxIterations => {
            return Err(Error::MaxIterations {
                iterations: solution.iterations,
                residual: solution.kkt_residual,
            })
        }
    }
    let mut weights = Vec::with_capacity(blocks.len());
    let mut residuals = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for (block, &k) in blocks.iter().zip(&sizes) {
        // weights at solver-noise level are dropped so exact vertices stay exact
        let mut g: Vec<f64> = solution.x[offset..offset + k]
            .iter()
            .map(|&v| if v > WEIGHT_FLOOR { v } else { 0.0 })
            .collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        residuals.push(weighted_residual(block.p, block.target, block.weight, &g));
        weights.push(g);
        offset += k;
    }
    Ok(StackedFit {
        weights,
        residuals,
        solution,
    })
}

/// `(t - P g)' W (t - P g)`.
pub fn weighted_residual(p: &DMatrix<f64>, target: &[f64], weight: Option<&DMatrix<f64>>, g: &[f64]) -> f64 {
    let r = DVector::from_column_slice(target) - p * DVector::from_column_slice(g);
    match weight {
        Some(w) => r.dot(&(w * &r)),
        None => r.dot(&r),
    }
}
