//! Constrained iteratively reweighted least squares.
//!
//! Each response part is treated as a binomial-type response with identity
//! link, so the working response is `Y` itself and the weight of entry
//! `(i, k)` is `1 / (mu_ik (1 - mu_ik))` at the current fitted mean. Every
//! iteration solves
//!
//! ```text
//!     minimize   sum_i sum_k w_ik (y_ik - x_i B_{.k})^2
//!     over       row-stochastic B
//! ```
//!
//! as one quadratic program in `vec(B)`. Its Hessian is block diagonal with
//! block `k` equal to `X' diag(w_.k) X`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::cls::{solve_with_ridge, unstack};
use crate::composition::{CoefficientMatrix, CompositionMatrix, SolverConfig, Weighting};
use crate::error::{Result, TflrError};
use crate::fit::{check_pair, initial_coefficients, FitResult, Method, StopReason};
use crate::objective::{self, fitted_row, FittedMatrix};
use crate::par;
use crate::qp::{coupled_simplex_constraints, BlockDiagonal, QpProblem};

/// Inverse-variance weights, one per observation and response part.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(TflrError::InvalidConfig(format!(
                "weights must be finite and positive, found {v}"
            )));
        }
        let values = values.as_standard_layout().into_owned();
        Ok(WeightMatrix { values })
    }

    /// All weights equal to one (ordinary least squares).
    pub fn ones(n: usize, dr: usize) -> Self {
        WeightMatrix {
            values: Array2::ones((n, dr)),
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

#[inline]
fn weight(mu: f64, eta: f64, scheme: Weighting) -> f64 {
    let mu = mu.clamp(eta, 1.0 - eta);
    match scheme {
        Weighting::Binomial => 1.0 / (mu * (1.0 - mu)),
        Weighting::Multinomial => 1.0 / mu,
    }
}

/// `w_ik = 1 / (mu_ik (1 - mu_ik))` with `mu` clamped to `[eta, 1 - eta]`.
pub fn compute_weights(m: &FittedMatrix, eta: f64) -> WeightMatrix {
    compute_weights_with(m, eta, Weighting::Binomial)
}

/// Weights under the chosen variance function, `mu` clamped as in
/// [`compute_weights`].
pub fn compute_weights_with(m: &FittedMatrix, eta: f64, scheme: Weighting) -> WeightMatrix {
    WeightMatrix {
        values: m.values().mapv(|mu| weight(mu, eta, scheme)),
    }
}

enum Weights<'a> {
    Given(&'a [f64]),
    /// Computed on the fly from the fitted values of these coefficients.
    AtCoefficients {
        b: &'a [f64],
        eta: f64,
        scheme: Weighting,
    },
}

/// Builds the reweighted least-squares program for explicit weights.
pub fn assemble_qp(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    w: &WeightMatrix,
) -> Result<QpProblem> {
    check_pair(x, y)?;
    if w.values.dim() != (y.nrows(), y.ncols()) {
        return Err(TflrError::DimensionMismatch(format!(
            "weights are {:?}, Y is {}x{}",
            w.values.dim(),
            y.nrows(),
            y.ncols()
        )));
    }
    let mut problem = empty_problem(x.ncols(), y.ncols());
    fill_problem(
        &mut problem,
        x,
        y,
        Weights::Given(w.values.as_slice().unwrap()),
    );
    Ok(problem)
}

fn empty_problem(dp: usize, dr: usize) -> QpProblem {
    QpProblem {
        hessian: BlockDiagonal::zeros(dr, dp),
        linear: vec![0.0; dp * dr],
        constraints: coupled_simplex_constraints(dp, dr),
    }
}

/// Overwrites the Hessian blocks and linear term of `problem` in place.
fn fill_problem(
    problem: &mut QpProblem,
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    weights: Weights<'_>,
) {
    let (n, dp, dr) = (x.nrows(), x.ncols(), y.ncols());
    let tri = dp * (dp + 1) / 2;
    let (xs, ys) = (x.as_slice(), y.as_slice());
    let len = dr * tri + dr * dp;
    let acc = par::sum_chunk_vecs(n, len, |rows| {
        let mut part = vec![0.0; len];
        let mut outer = vec![0.0; tri];
        let mut w = vec![0.0; dr];
        for i in rows {
            let xi = &xs[i * dp..(i + 1) * dp];
            let yi = &ys[i * dr..(i + 1) * dr];
            match weights {
                Weights::Given(ws) => w.copy_from_slice(&ws[i * dr..(i + 1) * dr]),
                Weights::AtCoefficients { b, eta, scheme } => {
                    fitted_row(xi, b, &mut w);
                    for v in w.iter_mut() {
                        *v = weight(*v, eta, scheme);
                    }
                }
            }
            let mut t = 0;
            for a in 0..dp {
                for c in a..dp {
                    outer[t] = xi[a] * xi[c];
                    t += 1;
                }
            }
            let (hess, lin) = part.split_at_mut(dr * tri);
            for k in 0..dr {
                let wk = w[k];
                for (h, o) in hess[k * tri..(k + 1) * tri].iter_mut().zip(&outer) {
                    *h += wk * o;
                }
                let wy = wk * yi[k];
                if wy != 0.0 {
                    for (l, xa) in lin[k * dp..(k + 1) * dp].iter_mut().zip(xi) {
                        *l += wy * xa;
                    }
                }
            }
        }
        part
    });
    let (hess, lin) = acc.split_at(dr * tri);
    for (k, block) in problem.hessian.blocks_mut().iter_mut().enumerate() {
        let packed = &hess[k * tri..(k + 1) * tri];
        let mut t = 0;
        for a in 0..dp {
            for c in a..dp {
                block[[a, c]] = packed[t];
                block[[c, a]] = packed[t];
                t += 1;
            }
        }
    }
    problem.linear.copy_from_slice(lin);
}

/// One reweighted step: solves the program for weights `w` and returns the
/// new coefficients.
pub fn cirls_step(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    w: &WeightMatrix,
) -> Result<CoefficientMatrix> {
    let mut problem = assemble_qp(x, y, w)?;
    let sol = solve_with_ridge(&mut problem)?;
    Ok(unstack(&sol.beta, x.ncols(), y.ncols()))
}

/// Fits `B` by constrained IRLS.
///
/// Iterates until the divergence changes by less than
/// `config.eps_converge` between successive iterates. The divergence is not
/// guaranteed to decrease monotonically; if the last iterate is worse than
/// the best one seen by more than the tolerance, the best one is returned.
pub fn fit_cirls(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_pair(x, y)?;
    let start = Instant::now();
    let mut b = initial_coefficients(x, y, &config.init)?;
    let (dp, dr) = (x.ncols(), y.ncols());
    let delta = config.delta_guard;
    let entropy = objective::neg_entropy(y);

    let mut problem = empty_problem(dp, dr);
    let mut kld_prev = entropy - objective::loglik_at(x, y, &b, delta);
    if !kld_prev.is_finite() {
        return Err(TflrError::NonFinite { iteration: 0 });
    }
    let mut best = (kld_prev, b.clone());
    let mut trace = config.record_trace.then(|| vec![kld_prev]);
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        let weights = Weights::AtCoefficients {
            b: b.as_slice(),
            eta: config.eta_clamp,
            scheme: config.weighting,
        };
        fill_problem(&mut problem, x, y, weights);
        let sol = solve_with_ridge(&mut problem)?;
        if sol.beta.iter().any(|v| !v.is_finite()) {
            return Err(TflrError::NonFinite { iteration: t });
        }
        b = unstack(&sol.beta, dp, dr);
        let kld_now = entropy - objective::loglik_at(x, y, &b, delta);
        if !kld_now.is_finite() {
            return Err(TflrError::NonFinite { iteration: t });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(kld_now);
        }
        if kld_now < best.0 {
            best = (kld_now, b.clone());
        }
        iterations = t;
        if (kld_prev - kld_now).abs() < config.eps_converge {
            stop = StopReason::ObjectiveChange;
            break;
        }
        kld_prev = kld_now;
    }

    let last = entropy - objective::loglik_at(x, y, &b, delta);
    if last > best.0 + config.eps_converge {
        b = best.1;
    }
    let kld = objective::kld(y, &objective::fitted(x, &b)?, delta)?;
    Ok(FitResult {
        method: Method::Cirls,
        b,
        kld,
        iterations,
        elapsed: start.elapsed(),
        converged: stop != StopReason::MaxIter,
        stop,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cls::fit_cls;
    use crate::composition::{validate_composition, Init};
    use crate::objective::fitted;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn comp(v: Array2<f64>) -> CompositionMatrix {
        validate_composition(v, 1e-12).unwrap()
    }

    #[test]
    fn weight_examples() {
        let m = FittedMatrix::new(array![[0.5, 0.5], [0.0, 1.0], [0.9, 0.1]]).unwrap();
        let w = compute_weights(&m, 1e-10);
        assert_eq!(w.values()[[0, 0]], 4.0);
        assert_abs_diff_eq!(
            w.values()[[1, 0]],
            1.0 / (1e-10 * (1.0 - 1e-10)),
            epsilon = 1.0
        );
        assert_abs_diff_eq!(w.values()[[1, 0]], 1.0e10, epsilon = 2.0);
        assert_abs_diff_eq!(w.values()[[2, 0]], 1.0 / 0.09, epsilon = 1e-12);
        assert_abs_diff_eq!(w.values()[[2, 0]], 11.111111111111, epsilon = 1e-9);
        for &v in w.values() {
            assert!((4.0..=1.0 / (1e-10 * (1.0 - 1e-10))).contains(&v));
        }
    }

    #[test]
    fn multinomial_weights() {
        let m = FittedMatrix::new(array![[0.25, 0.75], [0.0, 1.0]]).unwrap();
        let w = compute_weights_with(&m, 1e-10, Weighting::Multinomial);
        assert_eq!(w.values()[[0, 0]], 4.0);
        assert_abs_diff_eq!(w.values()[[0, 1]], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.values()[[1, 0]], 1e10, epsilon = 1e-3);
    }

    #[test]
    fn multinomial_weighting_reaches_the_divergence_minimum() {
        use crate::datagen::{generate, ScenarioKind, ScenarioSpec};
        let s = generate(&ScenarioSpec::new(400, 4, 3, ScenarioKind::Dependent, 17)).unwrap();
        let tight = SolverConfig {
            eps_converge: 1e-15,
            max_iter: 100_000,
            init: Init::Uniform,
            ..Default::default()
        };
        let em = crate::em::fit_em(&s.x, &s.y, &tight).unwrap();
        let config = SolverConfig {
            weighting: Weighting::Multinomial,
            ..Default::default()
        };
        let fit = fit_cirls(&s.x, &s.y, &config).unwrap();
        assert!(
            (fit.kld - em.kld).abs() <= 1e-8,
            "{} vs {}",
            fit.kld,
            em.kld
        );
        let binomial = fit_cirls(&s.x, &s.y, &SolverConfig::default()).unwrap();
        assert!(binomial.kld >= em.kld - 1e-9);
    }

    #[test]
    fn assembled_blocks_for_identity_design() {
        let x = comp(Array2::eye(2));
        let y = comp(array![[1.0, 0.0], [0.0, 1.0]]);
        let w = WeightMatrix::new(array![[2.0, 1.0], [3.0, 1.0]]).unwrap();
        let p = assemble_qp(&x, &y, &w).unwrap();
        assert_eq!(p.hessian.blocks()[0], array![[2.0, 0.0], [0.0, 3.0]]);

        let p = assemble_qp(&x, &y, &WeightMatrix::ones(2, 2)).unwrap();
        assert_eq!(p.linear, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_weights_reproduce_least_squares_problem() {
        let x = comp(array![
            [0.2, 0.5, 0.3],
            [0.0, 0.1, 0.9],
            [0.6, 0.4, 0.0],
            [0.3, 0.3, 0.4]
        ]);
        let y = comp(array![[0.25, 0.75], [0.6, 0.4], [0.1, 0.9], [0.5, 0.5]]);
        let p = assemble_qp(&x, &y, &WeightMatrix::ones(4, 2)).unwrap();
        let q = crate::cls::cls_problem(&x, &y).unwrap();
        for (a, b) in p.hessian.blocks().iter().zip(q.hessian.blocks()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-15);
            }
        }
        for (u, v) in p.linear.iter().zip(&q.linear) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-15);
        }
        let a = cirls_step(&x, &y, &WeightMatrix::ones(4, 2)).unwrap();
        let b = fit_cls(&x, &y).unwrap();
        let (fa, fb) = (fitted(&x, &a).unwrap(), fitted(&x, &b).unwrap());
        for (u, v) in fa.values().iter().zip(fb.values().iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_observation() {
        let x = comp(array![[0.5, 0.5]]);
        let y = comp(array![[0.7, 0.3]]);
        let res = fit_cirls(&x, &y, &SolverConfig::default()).unwrap();
        let m = fitted(&x, &res.b).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 0.7, epsilon = 1e-8);
        assert!(res.kld < 1e-8);
    }

    #[test]
    fn fixed_point_terminates_at_first_check() {
        let x = comp(array![[0.2, 0.8], [0.7, 0.3], [0.5, 0.5], [0.9, 0.1]]);
        let b0 = CoefficientMatrix::new(array![[0.1, 0.6, 0.3], [0.5, 0.25, 0.25]], 1e-12).unwrap();
        let y = comp(fitted(&x, &b0).unwrap().into_values());
        let cfg = SolverConfig {
            init: Init::Given(b0.clone()),
            ..Default::default()
        };
        let res = fit_cirls(&x, &y, &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.b.l1_distance(&b0) < 1e-8);
    }

    #[test]
    fn reported_kld_matches_recomputation() {
        let x = comp(array![
            [0.2, 0.5, 0.3],
            [0.0, 0.1, 0.9],
            [0.6, 0.4, 0.0],
            [0.3, 0.3, 0.4]
        ]);
        let y = comp(array![[0.25, 0.75], [0.6, 0.4], [0.1, 0.9], [0.5, 0.5]]);
        let res = fit_cirls(&x, &y, &SolverConfig::default()).unwrap();
        let again = objective::kld(&y, &fitted(&x, &res.b).unwrap(), 1e-8).unwrap();
        assert!((res.kld - again).abs() <= 1e-12);
        assert!(res.b.simplex_violation() <= 1e-9);
    }

    #[test]
    fn weight_shape_is_checked() {
        let x = comp(Array2::eye(2));
        let y = comp(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(assemble_qp(&x, &y, &WeightMatrix::ones(3, 2)).is_err());
        assert!(WeightMatrix::new(array![[0.0, 1.0]]).is_err());
    }
}
