//! Fitted compositions and the Kullback-Leibler objective.
//!
//! The fitted value for observation `i` and response part `k` is
//! `m_ik = sum_j x_ij B_jk`. The objective is
//! `KLD = sum_i sum_k y_ik ln(y_ik / max(m_ik, delta))`, where terms with
//! `y_ik = 0` contribute exactly zero.

use ndarray::{Array2, ArrayView2};

use crate::composition::{CoefficientMatrix, CompositionMatrix, SOLVER_TOL};
use crate::error::{Result, TflrError};
use crate::par;

/// `X B`: one fitted composition per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedMatrix {
    values: Array2<f64>,
}

impl FittedMatrix {
    /// Wraps an externally computed matrix of fitted compositions.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0 + SOLVER_TOL).contains(&v) {
                    return Err(TflrError::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > SOLVER_TOL {
                return Err(TflrError::RowSumViolation {
                    row: i,
                    sum,
                    tol: SOLVER_TOL,
                });
            }
        }
        let values = values.as_standard_layout().into_owned();
        Ok(FittedMatrix { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("standard layout")
    }
}

/// Computes `X B`.
pub fn fitted(x: &CompositionMatrix, b: &CoefficientMatrix) -> Result<FittedMatrix> {
    if x.ncols() != b.nrows() {
        return Err(TflrError::DimensionMismatch(format!(
            "X has {} columns but B has {} rows",
            x.ncols(),
            b.nrows()
        )));
    }
    let n = x.nrows();
    let dp = x.ncols();
    let dr = b.ncols();
    let xs = x.as_slice();
    let bs = b.as_slice();
    let parts = par::map_chunks(n, |_, rows| {
        let mut out = vec![0.0; rows.len() * dr];
        for (local, i) in rows.enumerate() {
            fitted_row(
                &xs[i * dp..(i + 1) * dp],
                bs,
                &mut out[local * dr..(local + 1) * dr],
            );
        }
        out
    });
    let flat: Vec<f64> = parts.concat();
    let values = Array2::from_shape_vec((n, dr), flat).expect("shape follows from construction");
    Ok(FittedMatrix { values })
}

/// `out = x_row B` for row-major `B` with `out.len()` columns.
#[inline]
pub(crate) fn fitted_row(x_row: &[f64], b: &[f64], out: &mut [f64]) {
    let dr = out.len();
    out.fill(0.0);
    for (j, &xj) in x_row.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, &bjk) in out.iter_mut().zip(&b[j * dr..(j + 1) * dr]) {
            *o += xj * bjk;
        }
    }
}

fn check_same_shape(y: &CompositionMatrix, m: &FittedMatrix) -> Result<()> {
    if y.nrows() != m.nrows() || y.ncols() != m.ncols() {
        return Err(TflrError::DimensionMismatch(format!(
            "Y is {}x{} but the fitted matrix is {}x{}",
            y.nrows(),
            y.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Kullback-Leibler divergence from the observed to the fitted compositions,
/// summed over observations.
pub fn kld(y: &CompositionMatrix, m: &FittedMatrix, delta: f64) -> Result<f64> {
    check_same_shape(y, m)?;
    let ys = y.as_slice();
    let ms = m.as_slice();
    Ok(par::sum_chunks(y.nrows(), |rows| {
        let d = y.ncols();
        let span = rows.start * d..rows.end * d;
        ys[span.clone()]
            .iter()
            .zip(&ms[span])
            .map(|(&yv, &mv)| {
                if yv > 0.0 {
                    yv * (yv / mv.max(delta)).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }))
}

/// The part of the objective that depends on the fitted values:
/// `sum y_ik ln(max(m_ik, delta))`. Maximizing it minimizes [`kld`].
pub fn working_loglik(y: &CompositionMatrix, m: &FittedMatrix, delta: f64) -> Result<f64> {
    check_same_shape(y, m)?;
    let ys = y.as_slice();
    let ms = m.as_slice();
    Ok(par::sum_chunks(y.nrows(), |rows| {
        let d = y.ncols();
        let span = rows.start * d..rows.end * d;
        ys[span.clone()]
            .iter()
            .zip(&ms[span])
            .map(|(&yv, &mv)| {
                if yv > 0.0 {
                    yv * mv.max(delta).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }))
}

/// `sum_{y_ik > 0} y_ik ln y_ik`, the constant linking [`kld`] and
/// [`working_loglik`].
pub fn neg_entropy(y: &CompositionMatrix) -> f64 {
    let ys = y.as_slice();
    par::sum_chunks(y.nrows(), |rows| {
        let d = y.ncols();
        ys[rows.start * d..rows.end * d]
            .iter()
            .map(|&yv| if yv > 0.0 { yv * yv.ln() } else { 0.0 })
            .sum()
    })
}

/// [`working_loglik`] evaluated at `X B` without materializing the fitted
/// matrix.
pub(crate) fn loglik_at(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    b: &CoefficientMatrix,
    delta: f64,
) -> f64 {
    let (dp, dr) = (x.ncols(), y.ncols());
    let (xs, ys, bs) = (x.as_slice(), y.as_slice(), b.as_slice());
    par::sum_chunks(x.nrows(), |rows| {
        let mut m = vec![0.0; dr];
        let mut ll = 0.0;
        for i in rows {
            fitted_row(&xs[i * dp..(i + 1) * dp], bs, &mut m);
            for (&yv, &mv) in ys[i * dr..(i + 1) * dr].iter().zip(&m) {
                if yv > 0.0 {
                    ll += yv * mv.max(delta).ln();
                }
            }
        }
        ll
    })
}
