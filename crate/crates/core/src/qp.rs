//! Convex quadratic programs over a box intersected with one sum constraint:
//!
//! ```text
//! minimize   ½ xᵀHx + fᵀx
//! subject to lower ≤ x ≤ upper,  1ᵀx = eq_target
//! ```
//!
//! [`solve_qp`] is a primal active-set method. The working set holds the
//! coordinates pinned at a bound; each iteration minimizes the objective over
//! the remaining free coordinates subject to the sum constraint, then either
//! steps towards that minimizer (stopping at the first bound hit) or releases
//! one bound whose multiplier has the wrong sign. Positive semidefinite `H`
//! is supported: when the reduced Hessian is singular the step follows a
//! zero-curvature descent direction to the nearest bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const BOUND_TOL: f64 = 1e-9;
const KKT_TOL: f64 = 1e-6;
const SNAP_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct BoxEqQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub eq_target: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl BoxEqQp {
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        eq_target: f64,
    ) -> Result<Self> {
        let qp = BoxEqQp {
            h,
            f,
            lower,
            upper,
            eq_target,
        };
        qp.validate()?;
        Ok(qp)
    }

    /// Problem with the same bounds `[lower, upper]` on every coordinate.
    pub fn with_uniform_bounds(
        h: DMatrix<f64>,
        f: DVector<f64>,
        lower: f64,
        upper: f64,
        eq_target: f64,
    ) -> Result<Self> {
        let n = f.len();
        Self::new(
            h,
            f,
            DVector::from_element(n, lower),
            DVector::from_element(n, upper),
            eq_target,
        )
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if n == 0 {
            return Err(Error::Validation("QP has no variables".into()));
        }
        if self.h.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Validation(format!(
                "QP dimension mismatch: H {:?}, f {n}, lower {}, upper {}",
                self.h.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        let all_finite = self.h.iter().chain(self.f.iter()).all(|v| v.is_finite())
            && self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
            && self.eq_target.is_finite();
        if !all_finite {
            return Err(Error::Validation("QP data must be finite".into()));
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Validation(format!(
                        "H is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| self.lower[i] > self.upper[i]) {
            return Err(Error::Infeasible(format!(
                "lower bound {} exceeds upper bound {} at {i}",
                self.lower[i], self.upper[i]
            )));
        }
        let (lo, hi) = (self.lower.sum(), self.upper.sum());
        let slack = BOUND_TOL * (n as f64) * (1.0 + self.eq_target.abs());
        if self.eq_target < lo - slack || self.eq_target > hi + slack {
            return Err(Error::Infeasible(format!(
                "sum target {} outside reachable range [{lo}, {hi}]",
                self.eq_target
            )));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.f
    }

    /// Largest bound or equality violation of `x`.
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let bounds = (0..self.dim())
            .map(|i| (self.lower[i] - x[i]).max(x[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max);
        bounds.max((x.sum() - self.eq_target).abs())
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let bounds_ok =
            (0..self.dim()).all(|i| x[i] >= self.lower[i] - BOUND_TOL && x[i] <= self.upper[i] + BOUND_TOL);
        bounds_ok && (x.sum() - self.eq_target).abs() <= 1e-6 * self.dim() as f64
    }

    /// `lower + t·(upper − lower)` with the scalar `t` fixing the sum.
    fn interpolated_start(&self) -> DVector<f64> {
        let width = &self.upper - &self.lower;
        let total = width.sum();
        let t = if total > 0.0 {
            ((self.eq_target - self.lower.sum()) / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        &self.lower + width * t
    }

    /// KKT residual of `x`: worst violation of stationarity, dual sign or
    /// primal feasibility, with the equality multiplier fitted to `x`.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        let n = self.dim();
        let tol = BOUND_TOL;
        let at_lower = |i: usize| x[i] <= self.lower[i] + tol;
        let at_upper = |i: usize| x[i] >= self.upper[i] - tol;
        let free: Vec<usize> = (0..n).filter(|&i| !at_lower(i) && !at_upper(i)).collect();
        let mu = if free.is_empty() {
            // All coordinates at a bound: pick the multiplier in the middle
            // of the dual-feasible interval (or of the violation gap).
            let lo = (0..n)
                .filter(|&i| at_lower(i) && !at_upper(i))
                .map(|i| -g[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..n)
                .filter(|&i| at_upper(i) && !at_lower(i))
                .map(|i| -g[i])
                .fold(f64::INFINITY, f64::min);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo,
                (false, true) => hi,
                (false, false) => 0.0,
            }
        } else {
            -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
        };
        let mut residual = self.infeasibility(x);
        for i in 0..n {
            let reduced = g[i] + mu;
            let r = match (at_lower(i), at_upper(i)) {
                (true, true) => 0.0,
                (true, false) => (-reduced).max(0.0),
                (false, true) => reduced.max(0.0),
                (false, false) => reduced.abs(),
            };
            residual = residual.max(r);
        }
        residual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
}

enum Step {
    /// Minimizer of the free-subspace problem is `x + p`.
    Newton(DVector<f64>),
    /// Zero-curvature descent ray; follow it to the nearest bound.
    Ray(DVector<f64>),
}

/// Diagonally pivoted Cholesky of a PSD matrix, stopping at the first pivot
/// below `tol`. Returns the permutation, rank and the factor (lower part,
/// permuted ordering).
fn pivoted_cholesky(a: &DMatrix<f64>, tol: f64) -> (Vec<usize>, usize, DMatrix<f64>) {
    let q = a.nrows();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..q).collect();
    let mut rank = 0;
    for j in 0..q {
        let (p, &pivot) = (j..q)
            .map(|i| (i, &work[(i, i)]))
            .fold((j, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        if pivot <= tol {
            break;
        }
        work.swap_rows(j, p);
        work.swap_columns(j, p);
        perm.swap(j, p);
        let d = work[(j, j)].sqrt();
        work[(j, j)] = d;
        for i in (j + 1)..q {
            work[(i, j)] /= d;
        }
        // Full trailing update: later symmetric swaps read both triangles.
        for c in (j + 1)..q {
            let lc = work[(c, j)];
            if lc == 0.0 {
                continue;
            }
            for r in (j + 1)..q {
                let v = work[(r, j)] * lc;
                work[(r, c)] -= v;
            }
        }
        rank += 1;
    }
    (perm, rank, work)
}

/// Forward substitution with the leading `k × k` lower block of `l`.
fn solve_lower(l: &DMatrix<f64>, k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Back substitution with the transpose of the leading `k × k` lower block.
fn solve_lower_transpose(l: &DMatrix<f64>, k: usize, b: &mut [f64]) {
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in (i + 1)..k {
            s -= l[(j, i)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Step for the free coordinates `free`, parameterized by
/// `p_free = Z z` with `Z = [e_i − e_last]` spanning `1ᵀp = 0`.
fn subspace_step(h: &DMatrix<f64>, g: &DVector<f64>, free: &[usize], n: usize) -> Step {
    let q = free.len();
    if q < 2 {
        return Step::Newton(DVector::zeros(n));
    }
    let last = free[q - 1];
    let head = &free[..q - 1];
    let dim = q - 1;
    let hll = h[(last, last)];
    let reduced = DMatrix::from_fn(dim, dim, |i, j| {
        let (a, b) = (head[i], head[j]);
        h[(a, b)] - h[(a, last)] - h[(last, b)] + hll
    });
    let s: Vec<f64> = head.iter().map(|&a| g[a] - g[last]).collect();
    let scale = reduced.diagonal().amax();
    let tol = 1e-11 * scale.max(f64::MIN_POSITIVE);
    let (perm, rank, l) = pivoted_cholesky(&reduced, if scale > 0.0 { tol } else { f64::INFINITY });

    let expand = |z: &[f64]| {
        // z is in pivoted order.
        let mut p = DVector::zeros(n);
        let mut sum = 0.0;
        for (t, &zi) in z.iter().enumerate() {
            p[head[perm[t]]] = zi;
            sum += zi;
        }
        p[last] = -sum;
        p
    };

    let s_perm: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
    if rank < dim {
        // Null space basis columns: trailing unit vectors completed by
        // y = −L11⁻ᵀ L21ᵀ e_t on the leading block.
        let mut c = vec![0.0; dim - rank];
        let mut null_cols: Vec<Vec<f64>> = Vec::with_capacity(dim - rank);
        for t in rank..dim {
            let mut y: Vec<f64> = (0..rank).map(|i| l[(t, i)]).collect();
            solve_lower_transpose(&l, rank, &mut y);
            let mut col = vec![0.0; dim];
            for i in 0..rank {
                col[i] = -y[i];
            }
            col[t] = 1.0;
            c[t - rank] = col.iter().zip(&s_perm).map(|(a, b)| a * b).sum();
            null_cols.push(col);
        }
        let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if c_norm > 1e-12 * (1.0 + s_norm) {
            let mut dz = vec![0.0; dim];
            for (col, ci) in null_cols.iter().zip(&c) {
                for (d, v) in dz.iter_mut().zip(col) {
                    *d -= ci * v;
                }
            }
            return Step::Ray(expand(&dz));
        }
    }
    let mut z = vec![0.0; dim];
    for i in 0..rank {
        z[i] = -s_perm[i];
    }
    solve_lower(&l, rank, &mut z);
    solve_lower_transpose(&l, rank, &mut z);
    Step::Newton(expand(&z))
}

/// Solves the QP from `start` (must be feasible) or from an interpolated
/// feasible point. The returned objective never exceeds the objective at
/// `start`.
pub fn solve_qp(problem: &BoxEqQp, start: Option<&DVector<f64>>) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.dim();
    let (lower, upper) = (&problem.lower, &problem.upper);
    let mut x = match start {
        Some(s) => {
            if !problem.is_feasible(s) {
                return Err(Error::Validation("QP start point is infeasible".into()));
            }
            s.clone()
        }
        None => problem.interpolated_start(),
    };

    let mut status: Vec<Status> = (0..n)
        .map(|i| {
            if x[i] <= lower[i] + BOUND_TOL {
                x[i] = lower[i];
                Status::Lower
            } else if x[i] >= upper[i] - BOUND_TOL {
                x[i] = upper[i];
                Status::Upper
            } else {
                Status::Free
            }
        })
        .collect();
    repair_sum(&mut x, problem, &status);

    let cap = 50 * n;
    let mut stationary = false;
    for iteration in 0..cap {
        let g = problem.gradient(&x);
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();

        if !stationary {
            let step = subspace_step(&problem.h, &g, &free, n);
            let (p, max_step) = match step {
                Step::Newton(p) => (p, 1.0),
                Step::Ray(p) => (p, f64::INFINITY),
            };
            let size = p.amax();
            if size > 1e-13 * (1.0 + x.amax()) || max_step.is_infinite() {
                let mut alpha = max_step;
                let mut blocking = None;
                for &i in &free {
                    let ratio = if p[i] < 0.0 {
                        (lower[i] - x[i]) / p[i]
                    } else if p[i] > 0.0 {
                        (upper[i] - x[i]) / p[i]
                    } else {
                        continue;
                    };
                    let ratio = ratio.max(0.0);
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
                if alpha.is_infinite() {
                    return Err(Error::State("QP descent ray is unbounded".into()));
                }
                x.axpy(alpha, &p, 1.0);
                if let Some(i) = blocking {
                    if p[i] < 0.0 {
                        x[i] = lower[i];
                        status[i] = Status::Lower;
                    } else {
                        x[i] = upper[i];
                        status[i] = Status::Upper;
                    }
                    repair_sum(&mut x, problem, &status);
                } else {
                    stationary = true;
                }
                continue;
            }
        }

        // Subspace minimizer: check the signs of the bound multipliers.
        let mu = if free.is_empty() {
            let lo = (0..n)
                .filter(|&i| status[i] == Status::Lower)
                .map(|i| -g[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..n)
                .filter(|&i| status[i] == Status::Upper)
                .map(|i| -g[i])
                .fold(f64::INFINITY, f64::min);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo,
                (false, true) => hi,
                (false, false) => 0.0,
            }
        } else {
            -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
        };
        let drop_tol = 1e-11 * (1.0 + g.amax());
        // Lowest-index release among wrong-signed multipliers (pinned boxes
        // with lower == upper never move).
        let release = (0..n).find(|&i| {
            if upper[i] - lower[i] <= 0.0 {
                return false;
            }
            match status[i] {
                Status::Lower => g[i] + mu < -drop_tol,
                Status::Upper => g[i] + mu > drop_tol,
                Status::Free => false,
            }
        });
        match release {
            Some(i) => {
                status[i] = Status::Free;
                stationary = false;
            }
            None => {
                snap_to_bounds(&mut x, problem, &mut status);
                let kkt_residual = problem.kkt_residual(&x);
                if kkt_residual > KKT_TOL {
                    return Err(Error::Convergence {
                        iterations: iteration + 1,
                        residual: kkt_residual,
                    });
                }
                return Ok(QpSolution {
                    objective: problem.objective(&x),
                    x,
                    iterations: iteration + 1,
                    kkt_residual,
                });
            }
        }
    }
    Err(Error::Convergence {
        iterations: cap,
        residual: problem.kkt_residual(&x),
    })
}

/// Moves free coordinates left a rounding error away from a bound onto it.
fn snap_to_bounds(x: &mut DVector<f64>, problem: &BoxEqQp, status: &mut [Status]) {
    let mut moved = false;
    for i in 0..x.len() {
        if status[i] != Status::Free {
            continue;
        }
        let tol = SNAP_TOL * (1.0 + problem.lower[i].abs().max(problem.upper[i].abs()));
        if x[i] <= problem.lower[i] + tol {
            x[i] = problem.lower[i];
            status[i] = Status::Lower;
            moved = true;
        } else if x[i] >= problem.upper[i] - tol {
            x[i] = problem.upper[i];
            status[i] = Status::Upper;
            moved = true;
        }
    }
    if moved {
        repair_sum(x, problem, status);
    }
}

/// Spreads rounding drift in `1ᵀx` over the free coordinates.
fn repair_sum(x: &mut DVector<f64>, problem: &BoxEqQp, status: &[Status]) {
    let free: Vec<usize> = (0..x.len()).filter(|&i| status[i] == Status::Free).collect();
    if free.is_empty() {
        return;
    }
    let drift = problem.eq_target - x.sum();
    let share = drift / free.len() as f64;
    for &i in &free {
        x[i] = (x[i] + share).clamp(problem.lower[i], problem.upper[i]);
    }
}

/// Euclidean projection onto `{lower ≤ x ≤ upper, 1ᵀx = target}` by
/// bisection on the shift `λ` in `clamp(y − λ)`.
pub fn project_box_sum(
    y: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    target: f64,
) -> DVector<f64> {
    let clamp = |lambda: f64| {
        DVector::from_fn(y.len(), |i, _| (y[i] - lambda).clamp(lower[i], upper[i]))
    };
    let spread = (y - lower).amax().max((y - upper).amax()) + 1.0;
    let (mut lo, mut hi) = (-spread, spread);
    while clamp(lo).sum() < target {
        lo *= 2.0;
    }
    while clamp(hi).sum() > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clamp(mid).sum() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp(0.5 * (lo + hi))
}

/// Plain projected-gradient descent from the projected origin. A reference
/// implementation for testing [`solve_qp`] on small problems.
pub fn projected_gradient_oracle(problem: &BoxEqQp, steps: usize, step_size: f64) -> Result<DVector<f64>> {
    problem.validate()?;
    let (lower, upper, target) = (&problem.lower, &problem.upper, problem.eq_target);
    let mut x = project_box_sum(&DVector::zeros(problem.dim()), lower, upper, target);
    for _ in 0..steps {
        let g = problem.gradient(&x);
        if g.amax() == 0.0 {
            break;
        }
        let next = project_box_sum(&(&x - g * step_size), lower, upper, target);
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}
