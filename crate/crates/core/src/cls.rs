//! Simplex-constrained least squares: minimize `||Y - X B||_F^2` over
//! row-stochastic `B`. Used as the default starting point of both iterative
//! estimators.

use std::time::Instant;

use ndarray::Array2;

use crate::composition::{CoefficientMatrix, CompositionMatrix, SolverConfig};
use crate::error::{Result, TflrError};
use crate::fit::{check_pair, FitResult, Method, StopReason};
use crate::objective;
use crate::qp::{coupled_simplex_constraints, solve_qp, BlockDiagonal, QpProblem, QpSolution};

/// Relative ridge added to singular Hessian blocks.
pub const RIDGE: f64 = 1e-10;

/// Builds the least-squares program: every Hessian block is `X'X` and the
/// linear term is `vec(X'Y)` with columns stacked.
pub fn cls_problem(x: &CompositionMatrix, y: &CompositionMatrix) -> Result<QpProblem> {
    check_pair(x, y)?;
    let (dp, dr) = (x.ncols(), y.ncols());
    let xv = x.values();
    let xtx = xv.t().dot(&xv);
    let xty = xv.t().dot(&y.values());
    let mut linear = vec![0.0; dp * dr];
    for k in 0..dr {
        for j in 0..dp {
            linear[k * dp + j] = xty[[j, k]];
        }
    }
    Ok(QpProblem {
        hessian: BlockDiagonal::new(vec![xtx; dr])?,
        linear,
        constraints: coupled_simplex_constraints(dp, dr),
    })
}

/// Fits `B` by simplex-constrained least squares.
pub fn fit_cls(x: &CompositionMatrix, y: &CompositionMatrix) -> Result<CoefficientMatrix> {
    let mut problem = cls_problem(x, y)?;
    let sol = solve_with_ridge(&mut problem)?;
    Ok(unstack(&sol.beta, x.ncols(), y.ncols()))
}

pub(crate) fn fit_cls_result(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    let start = Instant::now();
    let b = fit_cls(x, y)?;
    let kld = objective::kld(y, &objective::fitted(x, &b)?, config.delta_guard)?;
    Ok(FitResult {
        method: Method::Cls,
        b,
        kld,
        iterations: 1,
        elapsed: start.elapsed(),
        converged: true,
        stop: StopReason::Direct,
        trace: config.record_trace.then(|| vec![kld]),
    })
}

/// Solves `problem`, retrying once with a ridge on every Hessian block if
/// one of them is singular. The ridge stays in `problem` afterwards.
pub(crate) fn solve_with_ridge(problem: &mut QpProblem) -> Result<QpSolution> {
    match solve_qp(problem) {
        Err(TflrError::NotPositiveDefinite { .. }) => {
            problem.hessian.add_block_ridge(RIDGE);
            solve_qp(problem)
        }
        other => other,
    }
}

/// Inverse of the column-stacking: `B_jk = beta[k * dp + j]`.
pub(crate) fn unstack(beta: &[f64], dp: usize, dr: usize) -> CoefficientMatrix {
    let values = Array2::from_shape_fn((dp, dr), |(j, k)| beta[k * dp + j]);
    CoefficientMatrix::from_solver(values)
}
