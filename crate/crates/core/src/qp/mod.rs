//! Dual active-set solver for strictly convex quadratic programs.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 b' G b - d' b
//!     subject to  A_eq b  = c_eq      (first n_eq rows of A)
//!                 A_in b >= c_in      (remaining rows)
//! ```
//!
//! following Goldfarb and Idnani (1983): start from the unconstrained
//! minimizer, repeatedly pick the most violated constraint and move in the
//! primal/dual space until it becomes active, dropping active inequalities
//! whose multipliers would turn negative. The working set is kept through
//! `J = L^{-T} Q` and the upper triangular `R` of the QR factorization of
//! `L^{-1} N`, where `G = L L^T` and `N` holds the active normals.
//!
//! `G` is passed as a [`BlockDiagonal`]; each block is factored on its own.

mod constraints;
mod linalg;

use std::collections::HashSet;

pub use constraints::{coupled_simplex_constraints, simplex_constraints, Constraints};
pub use linalg::BlockDiagonal;

use crate::error::{Result, TflrError};

/// Relative ridge applied when the working set starts cycling.
const CYCLE_RIDGE: f64 = 1e-10;

/// Normalized violation below which a constraint counts as satisfied.
const FEAS_TOL: f64 = 1e-12;

/// A quadratic program `min 1/2 b'Gb - d'b` subject to `A b >= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: BlockDiagonal,
    pub linear: Vec<f64>,
    pub constraints: Constraints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Indices of the binding constraints, ascending. Equalities are always
    /// listed.
    pub active_set: Vec<usize>,
    /// One multiplier per constraint; zero for inactive constraints.
    pub multipliers: Vec<f64>,
    /// Number of constraint additions and deletions.
    pub iterations: usize,
}

impl QpProblem {
    pub fn objective(&self, beta: &[f64]) -> f64 {
        let gb = self.hessian.mul_vec(beta);
        beta.iter()
            .zip(&gb)
            .zip(&self.linear)
            .map(|((b, g), d)| 0.5 * b * g - d * b)
            .sum()
    }

    fn check(&self) -> Result<()> {
        let m = self.hessian.dim();
        if self.linear.len() != m {
            return Err(TflrError::DimensionMismatch(format!(
                "linear term has {} entries for a {m}-dimensional problem",
                self.linear.len()
            )));
        }
        if self.constraints.dim() != m {
            return Err(TflrError::DimensionMismatch(format!(
                "constraints act on {} variables, problem has {m}",
                self.constraints.dim()
            )));
        }
        if self.hessian.asymmetry() > 1e-10 {
            return Err(TflrError::DimensionMismatch(
                "quadratic term is not symmetric".into(),
            ));
        }
        Ok(())
    }
}

/// Solves `p` to global optimality.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.check()?;
    match DualActiveSet::run(p, &p.hessian) {
        Ok(sol) => Ok(sol),
        Err(SolveError::Fatal(e)) => Err(e),
        Err(SolveError::Cycled) => {
            let mut ridged = p.hessian.clone();
            ridged.add_ridge(CYCLE_RIDGE);
            DualActiveSet::run(p, &ridged).map_err(|e| match e {
                SolveError::Fatal(e) => e,
                SolveError::Cycled => TflrError::IterationLimit {
                    limit: iteration_cap(p),
                },
            })
        }
    }
}

fn iteration_cap(p: &QpProblem) -> usize {
    50 * p.constraints.len().max(1)
}

enum SolveError {
    /// A working set was revisited.
    Cycled,
    Fatal(TflrError),
}

struct DualActiveSet<'a> {
    m: usize,
    a: &'a Constraints,
    /// `J`, column-major.
    j: Vec<f64>,
    /// `R`, column-major; only the leading `q x q` upper triangle is used.
    r: Vec<f64>,
    x: Vec<f64>,
    active: Vec<usize>,
    /// `+1` or `-1`: equalities may enter with their normal flipped.
    signs: Vec<f64>,
    u: Vec<f64>,
    iterations: usize,
}

// Index loops mirror the textbook update formulas.
#[allow(clippy::needless_range_loop)]
impl<'a> DualActiveSet<'a> {
    fn run(p: &'a QpProblem, g: &BlockDiagonal) -> std::result::Result<QpSolution, SolveError> {
        let m = g.dim();
        let j = g.inverse_cholesky_transpose().map_err(SolveError::Fatal)?;
        // Unconstrained minimizer G^{-1} d = J J^T d.
        let mut x = vec![0.0; m];
        for c in 0..m {
            let col = &j[c * m..(c + 1) * m];
            axpy(dot(col, &p.linear), col, &mut x);
        }
        let mut state = DualActiveSet {
            m,
            a: &p.constraints,
            j,
            r: vec![0.0; m * m],
            x,
            active: Vec::new(),
            signs: Vec::new(),
            u: Vec::new(),
            iterations: 0,
        };
        state.solve(iteration_cap(p))?;
        Ok(state.finish(p))
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    /// Signed slack `sign * (a_i' x - b_i)`.
    fn slack(&self, i: usize, sign: f64) -> f64 {
        sign * (self.a.row_dot(i, &self.x) - self.a.rhs(i))
    }

    /// Most violated inactive constraint as `(index, sign)`; lowest index on
    /// ties.
    fn most_violated(&self) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_viol = -FEAS_TOL;
        for i in 0..self.a.len() {
            if self.active.contains(&i) {
                continue;
            }
            let norm = self.a.norm(i);
            let raw = self.a.row_dot(i, &self.x) - self.a.rhs(i);
            if norm == 0.0 {
                let violated = if i < self.a.n_eq() {
                    raw.abs() > FEAS_TOL
                } else {
                    raw < -FEAS_TOL
                };
                if violated {
                    return Err(TflrError::Infeasible);
                }
                continue;
            }
            let scale = 1.0 + self.a.rhs(i).abs();
            let (viol, sign) = if i < self.a.n_eq() && raw > 0.0 {
                (-raw, -1.0)
            } else {
                (raw, 1.0)
            };
            let v = viol / (norm * scale);
            if v < best_viol {
                best_viol = v;
                best = Some((i, sign));
            }
        }
        Ok(best)
    }

    fn solve(&mut self, cap: usize) -> std::result::Result<(), SolveError> {
        let m = self.m;
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut dvec = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut rvec = vec![0.0; m];
        loop {
            let mut key = self.active.clone();
            key.sort_unstable();
            if !seen.insert(key) {
                return Err(SolveError::Cycled);
            }
            let Some((p, sign)) = self.most_violated().map_err(SolveError::Fatal)? else {
                return Ok(());
            };
            let mut u_p = 0.0;
            loop {
                if self.iterations >= cap {
                    return Err(SolveError::Fatal(TflrError::IterationLimit { limit: cap }));
                }
                let q = self.q();
                // d = J^T n_p
                for (c, dc) in dvec.iter_mut().enumerate() {
                    *dc = sign * self.a.sparse_dot(p, &self.j[c * m..(c + 1) * m]);
                }
                // z = J_2 d_2: step direction in primal space.
                z.fill(0.0);
                for c in q..m {
                    axpy(dvec[c], &self.j[c * m..(c + 1) * m], &mut z);
                }
                // r = R^{-1} d_1: effect on the active multipliers.
                for i in (0..q).rev() {
                    let mut s = dvec[i];
                    for c in i + 1..q {
                        s -= self.r[c * m + i] * rvec[c];
                    }
                    rvec[i] = s / self.r[i * m + i];
                }
                let r_scale = rvec[..q].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));

                // Largest dual step keeping active inequality multipliers >= 0.
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for pos in 0..q {
                    if self.active[pos] < self.a.n_eq() {
                        continue;
                    }
                    if rvec[pos] > 1e-13 * r_scale {
                        let ratio = self.u[pos] / rvec[pos];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(pos);
                        }
                    }
                }

                // Full primal step making constraint p active.
                let d_norm2: f64 = dvec.iter().map(|v| v * v).sum();
                let zn: f64 = dvec[q..].iter().map(|v| v * v).sum();
                let t2 = if zn > 1e-20 * d_norm2 {
                    -self.slack(p, sign) / zn
                } else {
                    f64::INFINITY
                };

                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(SolveError::Fatal(TflrError::Infeasible));
                }
                let t = t.max(0.0);

                for pos in 0..q {
                    self.u[pos] -= t * rvec[pos];
                }
                u_p += t;

                if t2.is_finite() {
                    axpy(t, &z, &mut self.x);
                }

                if t2 <= t1 {
                    self.add_constraint(p, sign, u_p, &mut dvec);
                    self.iterations += 1;
                    break;
                }
                let pos = drop_at.expect("finite partial step has a blocking constraint");
                self.drop_constraint(pos);
                self.iterations += 1;
            }
        }
    }

    /// Appends constraint `p`; `dvec` holds `J^T n_p` on entry.
    fn add_constraint(&mut self, p: usize, sign: f64, u_p: f64, dvec: &mut [f64]) {
        let m = self.m;
        let q = self.q();
        // Rotate d[q+1..] into d[q], applying the same rotations to J.
        for k in (q + 1..m).rev() {
            let (a, b) = (dvec[k - 1], dvec[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            dvec[k - 1] = h;
            dvec[k] = 0.0;
            let (left, right) = self.j.split_at_mut(k * m);
            rotate(&mut left[(k - 1) * m..], &mut right[..m], c, s);
        }
        for i in 0..=q {
            self.r[q * m + i] = dvec[i];
        }
        self.active.push(p);
        self.signs.push(sign);
        self.u.push(u_p);
    }

    /// Removes the active constraint at position `pos` and restores `R` to
    /// upper triangular form.
    fn drop_constraint(&mut self, pos: usize) {
        let m = self.m;
        let q = self.q();
        for c in pos..q - 1 {
            for i in 0..=c + 1 {
                self.r[c * m + i] = self.r[(c + 1) * m + i];
            }
        }
        for i in 0..m {
            self.r[(q - 1) * m + i] = 0.0;
        }
        // Columns pos..q-2 now carry one sub-diagonal entry each.
        for k in pos..q - 1 {
            let (a, b) = (self.r[k * m + k], self.r[k * m + k + 1]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let (rk, rk1) = (self.r[col * m + k], self.r[col * m + k + 1]);
                self.r[col * m + k] = c * rk + s * rk1;
                self.r[col * m + k + 1] = -s * rk + c * rk1;
            }
            self.r[k * m + k + 1] = 0.0;
            let (left, right) = self.j.split_at_mut((k + 1) * m);
            rotate(&mut left[k * m..], &mut right[..m], c, s);
        }
        self.active.remove(pos);
        self.signs.remove(pos);
        self.u.remove(pos);
    }

    fn finish(&self, p: &QpProblem) -> QpSolution {
        let mut multipliers = vec![0.0; self.a.len()];
        for ((&i, &s), &u) in self.active.iter().zip(&self.signs).zip(&self.u) {
            multipliers[i] = s * u;
        }
        // Equalities bind at every feasible point, added or not.
        let mut active_set: Vec<usize> = (0..self.a.n_eq()).collect();
        active_set.extend(self.active.iter().copied().filter(|&i| i >= self.a.n_eq()));
        active_set.sort_unstable();
        QpSolution {
            objective: p.objective(&self.x),
            beta: self.x.clone(),
            active_set,
            multipliers,
            iterations: self.iterations,
        }
    }
}

/// `(x, y) <- (c x + s y, -s x + c y)` over the first `y.len()` entries.
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a + s * b;
        *yi = -s * a + c * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
