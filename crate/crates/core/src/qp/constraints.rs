use ndarray::Array2;

use crate::error::{Result, TflrError};

/// Linear constraints `A b >= c`, the first `n_eq` rows holding with
/// equality.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    a: Array2<f64>,
    rhs: Vec<f64>,
    n_eq: usize,
    norms: Vec<f64>,
    nonzeros: Vec<Vec<usize>>,
}

impl Constraints {
    pub fn new(a: Array2<f64>, rhs: Vec<f64>, n_eq: usize) -> Result<Self> {
        if a.nrows() != rhs.len() {
            return Err(TflrError::DimensionMismatch(format!(
                "{} constraint rows but {} right-hand sides",
                a.nrows(),
                rhs.len()
            )));
        }
        if n_eq > rhs.len() {
            return Err(TflrError::DimensionMismatch(format!(
                "{n_eq} equalities among {} constraints",
                rhs.len()
            )));
        }
        let a = a.as_standard_layout().into_owned();
        let norms = a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let nonzeros = a
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(Constraints {
            a,
            rhs,
            n_eq,
            norms,
            nonzeros,
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn rhs_vec(&self) -> &[f64] {
        &self.rhs
    }

    pub fn n_eq(&self) -> usize {
        self.n_eq
    }

    /// Number of constraints.
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Number of variables.
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub(crate) fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    pub(crate) fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub(crate) fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.sparse_dot(i, x)
    }

    /// `a_i . v`, touching only the non-zero entries of row `i`.
    pub(crate) fn sparse_dot(&self, i: usize, v: &[f64]) -> f64 {
        let row = self.a.row(i);
        self.nonzeros[i].iter().map(|&j| row[j] * v[j]).sum()
    }

    /// Largest violation of any constraint at `beta`: `|a_i b - c_i|` for
    /// equalities, `c_i - a_i b` for inequalities.
    pub fn max_violation(&self, beta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let s = self.row_dot(i, beta) - self.rhs[i];
                if i < self.n_eq {
                    s.abs()
                } else {
                    (-s).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

/// One sum-to-one equality followed by `m` non-negativity bounds. The upper
/// bounds `b_j <= 1` follow from these and are left out.
pub fn simplex_constraints(m: usize) -> Constraints {
    let mut a = Array2::zeros((m + 1, m));
    a.row_mut(0).fill(1.0);
    for j in 0..m {
        a[[j + 1, j]] = 1.0;
    }
    let mut rhs = vec![0.0; m + 1];
    rhs[0] = 1.0;
    Constraints::new(a, rhs, 1).expect("shapes agree by construction")
}

/// Row-stochastic constraints on a `dp x dr` coefficient matrix vectorized
/// by stacking its columns: variable `k * dp + j` is `B_jk`.
///
/// Rows `0..dp` are the equalities `sum_k B_jk = 1`; the remaining
/// `dp * dr` rows are `B_jk >= 0` in variable order.
pub fn coupled_simplex_constraints(dp: usize, dr: usize) -> Constraints {
    let m = dp * dr;
    let mut a = Array2::zeros((dp + m, m));
    for j in 0..dp {
        for k in 0..dr {
            a[[j, k * dp + j]] = 1.0;
        }
    }
    for v in 0..m {
        a[[dp + v, v]] = 1.0;
    }
    let mut rhs = vec![0.0; dp + m];
    rhs[..dp].fill(1.0);
    Constraints::new(a, rhs, dp).expect("shapes agree by construction")
}
