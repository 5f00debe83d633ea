//! Expectation-maximization estimator.
//!
//! Each response part `y_ik` is treated as the aggregate of latent
//! contributions `z_ijk` from the predictor parts. The E-step splits `y_ik`
//! in proportion to `x_ij B_jk`; the M-step sets each row of `B` to the
//! normalized total allocation of its predictor part. Every update keeps `B`
//! row-stochastic and never increases the divergence.

use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView3};

use crate::composition::{CoefficientMatrix, CompositionMatrix, Init, SolverConfig};
use crate::error::{Result, TflrError};
use crate::fit::{check_pair, initial_coefficients, FitResult, Method, StopReason};
use crate::objective::{self, fitted_row};
use crate::par;

/// Expected allocations `z_ijk`, indexed `[observation, predictor part,
/// response part]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentAllocation {
    values: Array3<f64>,
}

impl LatentAllocation {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(TflrError::InvalidConfig(format!(
                "allocations must be finite and non-negative, found {v}"
            )));
        }
        Ok(LatentAllocation { values })
    }

    pub fn values(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }
}

/// Result of an M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub coefficients: CoefficientMatrix,
    /// Predictor parts with zero total allocation; their rows were reset to
    /// uniform.
    pub dead_rows: Vec<usize>,
}

fn check_shapes(x: &CompositionMatrix, y: &CompositionMatrix, b: &CoefficientMatrix) -> Result<()> {
    check_pair(x, y)?;
    if b.nrows() != x.ncols() || b.ncols() != y.ncols() {
        return Err(TflrError::DimensionMismatch(format!(
            "B is {}x{} but X has {} and Y has {} columns",
            b.nrows(),
            b.ncols(),
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `z_ijk = x_ij B_jk / max(sum_j' x_ij' B_j'k, delta) * y_ik`.
pub fn e_step(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    b: &CoefficientMatrix,
    delta: f64,
) -> Result<LatentAllocation> {
    check_shapes(x, y, b)?;
    let (n, dp, dr) = (x.nrows(), x.ncols(), y.ncols());
    let (xs, ys, bs) = (x.as_slice(), y.as_slice(), b.as_slice());
    let parts = par::map_chunks(n, |_, rows| {
        let mut out = vec![0.0; rows.len() * dp * dr];
        let mut m = vec![0.0; dr];
        for (local, i) in rows.enumerate() {
            let xi = &xs[i * dp..(i + 1) * dp];
            let yi = &ys[i * dr..(i + 1) * dr];
            fitted_row(xi, bs, &mut m);
            let zi = &mut out[local * dp * dr..(local + 1) * dp * dr];
            for (j, &xij) in xi.iter().enumerate() {
                for k in 0..dr {
                    zi[j * dr + k] = xij * bs[j * dr + k] / m[k].max(delta) * yi[k];
                }
            }
        }
        out
    });
    let values = Array3::from_shape_vec((n, dp, dr), parts.concat())
        .expect("shape follows from construction");
    Ok(LatentAllocation { values })
}

/// `B_jk = sum_i z_ijk / sum_k' sum_i z_ijk'`.
pub fn m_step(z: &LatentAllocation) -> MStep {
    let (_, dp, dr) = z.values.dim();
    let mut totals = Array2::<f64>::zeros((dp, dr));
    for zi in z.values.outer_iter() {
        totals += &zi;
    }
    let (values, dead_rows) = normalize_rows(totals);
    MStep {
        coefficients: CoefficientMatrix::from_solver(values),
        dead_rows,
    }
}

/// Closes each row, resetting all-zero rows to uniform.
fn normalize_rows(mut totals: Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let dr = totals.ncols();
    let mut dead = Vec::new();
    for (j, mut row) in totals.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        } else {
            row.fill(1.0 / dr as f64);
            dead.push(j);
        }
    }
    (totals, dead)
}

/// One pass over the data at the current `B`: the working log-likelihood
/// and, for every `(j, k)`, `sum_i x_ij y_ik / max(m_ik, delta)`.
///
/// Multiplying the second output by `B_jk` gives the summed E-step
/// allocations, so the pass is an E-step and M-step fused without storing
/// the n x D_p x D_r allocation array.
fn sweep(
    xs: &[f64],
    ys: &[f64],
    bs: &[f64],
    (n, dp, dr): (usize, usize, usize),
    delta: f64,
) -> (f64, Vec<f64>) {
    let len = dp * dr + 1;
    let mut acc = par::sum_chunk_vecs(n, len, |rows| {
        let mut part = vec![0.0; len];
        let mut m = vec![0.0; dr];
        let mut g = vec![0.0; dr];
        let mut ll = 0.0;
        for i in rows {
            let xi = &xs[i * dp..(i + 1) * dp];
            let yi = &ys[i * dr..(i + 1) * dr];
            fitted_row(xi, bs, &mut m);
            for k in 0..dr {
                if yi[k] > 0.0 {
                    let mk = m[k].max(delta);
                    g[k] = yi[k] / mk;
                    ll += yi[k] * mk.ln();
                } else {
                    g[k] = 0.0;
                }
            }
            for (j, &xij) in xi.iter().enumerate() {
                if xij == 0.0 {
                    continue;
                }
                for (t, gk) in part[j * dr..(j + 1) * dr].iter_mut().zip(&g) {
                    *t += xij * gk;
                }
            }
        }
        part[len - 1] = ll;
        part
    });
    let ll = acc.pop().expect("non-empty accumulator");
    (ll, acc)
}

/// Share of the uniform matrix mixed into a least-squares start that has
/// exact zeros.
pub const ZERO_LIFT: f64 = 1e-3;

/// EM updates are multiplicative, so a zero coefficient can never move.
/// Least-squares starts often sit on a face of the simplex; pull them
/// slightly inside.
fn lift_zeros(b: CoefficientMatrix) -> CoefficientMatrix {
    if b.values().iter().all(|&v| v > 0.0) {
        return b;
    }
    let u = 1.0 / b.ncols() as f64;
    let lifted = b.values().mapv(|v| (1.0 - ZERO_LIFT) * v + ZERO_LIFT * u);
    CoefficientMatrix::from_solver(lifted)
}

/// Fits `B` by EM from the configured starting point.
///
/// A least-squares start with exact zeros is first mixed with the uniform
/// matrix (weight [`ZERO_LIFT`]).
///
/// Stops when the L1 change of `B` or the decrease of the divergence drops
/// below `config.eps_converge`, whichever happens first.
pub fn fit_em(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_pair(x, y)?;
    let start = Instant::now();
    let mut b0 = initial_coefficients(x, y, &config.init)?;
    if config.init == Init::Cls {
        b0 = lift_zeros(b0);
    }
    let dims = (x.nrows(), x.ncols(), y.ncols());
    let (dp, dr) = (dims.1, dims.2);
    let (xs, ys) = (x.as_slice(), y.as_slice());
    let delta = config.delta_guard;
    let entropy = objective::neg_entropy(y);

    let mut b = b0.into_values();
    let (ll, mut totals) = sweep(xs, ys, b.as_slice().unwrap(), dims, delta);
    let mut kld_prev = entropy - ll;
    if !kld_prev.is_finite() {
        return Err(TflrError::NonFinite { iteration: 0 });
    }
    let mut trace = config.record_trace.then(|| vec![kld_prev]);
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        let mut next = b.clone();
        for (nv, tv) in next.iter_mut().zip(&totals) {
            *nv *= tv;
        }
        let (next, _) = normalize_rows(next);
        let change: f64 = next.iter().zip(b.iter()).map(|(a, c)| (a - c).abs()).sum();
        let (ll, new_totals) = sweep(xs, ys, next.as_slice().unwrap(), dims, delta);
        let kld_now = entropy - ll;
        if !kld_now.is_finite() || !change.is_finite() {
            return Err(TflrError::NonFinite { iteration: t });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(kld_now);
        }
        b = next;
        totals = new_totals;
        iterations = t;
        if change < config.eps_converge {
            stop = StopReason::ParameterChange;
            break;
        }
        if kld_prev - kld_now < config.eps_converge {
            stop = StopReason::ObjectiveChange;
            break;
        }
        kld_prev = kld_now;
    }
    debug_assert_eq!(b.dim(), (dp, dr));

    let b = CoefficientMatrix::from_solver(b);
    let kld = objective::kld(y, &objective::fitted(x, &b)?, delta)?;
    Ok(FitResult {
        method: Method::Em,
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
    use crate::composition::validate_composition;
    use crate::objective::fitted;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn comp(v: Array2<f64>) -> CompositionMatrix {
        validate_composition(v, 1e-12).unwrap()
    }

    #[test]
    fn e_step_splits_evenly_under_symmetry() {
        let z = e_step(
            &comp(array![[0.5, 0.5]]),
            &comp(array![[0.7, 0.3]]),
            &CoefficientMatrix::uniform(2, 2),
            1e-8,
        )
        .unwrap();
        let z = z.values();
        for j in 0..2 {
            assert_abs_diff_eq!(z[[0, j, 0]], 0.35, epsilon = 1e-15);
            assert_abs_diff_eq!(z[[0, j, 1]], 0.15, epsilon = 1e-15);
        }
    }

    #[test]
    fn e_step_single_support() {
        let b = CoefficientMatrix::new(array![[0.6, 0.4], [0.1, 0.9]], 1e-12).unwrap();
        let z = e_step(
            &comp(array![[1.0, 0.0]]),
            &comp(array![[1.0, 0.0]]),
            &b,
            1e-8,
        )
        .unwrap();
        let z = z.values();
        assert_eq!(z[[0, 0, 0]], 1.0);
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn e_step_guard_keeps_values_finite() {
        // Fitted m_11 = 0 while y_11 = 1.
        let b = CoefficientMatrix::new(array![[0.0, 1.0], [0.0, 1.0]], 1e-12).unwrap();
        let z = e_step(
            &comp(array![[0.5, 0.5]]),
            &comp(array![[1.0, 0.0]]),
            &b,
            1e-8,
        )
        .unwrap();
        assert!(z.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn e_step_partitions_response_mass() {
        let x = comp(array![[0.2, 0.5, 0.3], [0.0, 0.1, 0.9]]);
        let y = comp(array![[0.25, 0.75], [0.6, 0.4]]);
        let b = CoefficientMatrix::new(array![[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]], 1e-12).unwrap();
        let z = e_step(&x, &y, &b, 1e-8).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let s: f64 = (0..3).map(|j| z.values()[[i, j, k]]).sum();
                assert_abs_diff_eq!(s, y.values()[[i, k]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn e_step_rejects_bad_shapes() {
        let err = e_step(
            &comp(array![[0.5, 0.5]]),
            &comp(array![[0.5, 0.5]]),
            &CoefficientMatrix::uniform(3, 2),
            1e-8,
        );
        assert!(matches!(err, Err(TflrError::DimensionMismatch(_))));
    }

    #[test]
    fn m_step_examples() {
        let z = e_step(
            &comp(array![[0.5, 0.5]]),
            &comp(array![[0.7, 0.3]]),
            &CoefficientMatrix::uniform(2, 2),
            1e-8,
        )
        .unwrap();
        let out = m_step(&z);
        for j in 0..2 {
            assert_abs_diff_eq!(out.coefficients.values()[[j, 0]], 0.7, epsilon = 1e-15);
            assert_abs_diff_eq!(out.coefficients.values()[[j, 1]], 0.3, epsilon = 1e-15);
        }
        assert!(out.dead_rows.is_empty());

        let mut v = Array3::zeros((1, 2, 2));
        v[[0, 0, 0]] = 1.0;
        let out = m_step(&LatentAllocation::new(v).unwrap());
        assert_eq!(out.coefficients.values(), array![[1.0, 0.0], [0.5, 0.5]]);
        assert_eq!(out.dead_rows, vec![1]);

        let out = m_step(&LatentAllocation::new(Array3::from_elem((4, 3, 5), 0.2)).unwrap());
        assert_eq!(out.coefficients, CoefficientMatrix::uniform(3, 5));
    }

    #[test]
    fn fused_iteration_matches_explicit_steps() {
        let x = comp(array![[0.2, 0.5, 0.3], [0.0, 0.1, 0.9], [0.6, 0.4, 0.0]]);
        let y = comp(array![[0.25, 0.75], [0.6, 0.4], [0.1, 0.9]]);
        let b = CoefficientMatrix::new(array![[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]], 1e-12).unwrap();
        let explicit = m_step(&e_step(&x, &y, &b, 1e-8).unwrap()).coefficients;
        let cfg = SolverConfig {
            init: Init::Given(b),
            max_iter: 1,
            ..Default::default()
        };
        let fused = fit_em(&x, &y, &cfg).unwrap();
        for (a, c) in fused.b.values().iter().zip(explicit.values().iter()) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_observation_is_fit_exactly() {
        let x = comp(array![[0.5, 0.5]]);
        let y = comp(array![[0.7, 0.3]]);
        let cfg = SolverConfig {
            init: Init::Uniform,
            ..Default::default()
        };
        let res = fit_em(&x, &y, &cfg).unwrap();
        assert!(res.converged);
        let m = fitted(&x, &res.b).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 0.7, epsilon = 1e-10);
        assert!(res.kld.abs() < 1e-8);
    }

    #[test]
    fn identity_design_recovers_responses() {
        let x = comp(Array2::eye(3));
        let y = comp(array![[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]);
        let cfg = SolverConfig {
            init: Init::Uniform,
            ..Default::default()
        };
        let res = fit_em(&x, &y, &cfg).unwrap();
        for (a, c) in res.b.values().iter().zip(y.values().iter()) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-7);
        }
        assert!(res.kld < 1e-10);
    }

    #[test]
    fn fixed_point_stops_immediately() {
        let x = comp(array![[0.2, 0.8], [0.7, 0.3], [0.5, 0.5]]);
        let b0 = CoefficientMatrix::new(array![[0.1, 0.6, 0.3], [0.5, 0.25, 0.25]], 1e-12).unwrap();
        let y = comp(fitted(&x, &b0).unwrap().into_values());
        let cfg = SolverConfig {
            init: Init::Given(b0.clone()),
            ..Default::default()
        };
        let res = fit_em(&x, &y, &cfg).unwrap();
        assert!(res.iterations <= 2);
        assert!(res.b.l1_distance(&b0) < 1e-12);
    }

    #[test]
    fn dead_predictor_column_gets_uniform_row() {
        let x = comp(array![[0.4, 0.0, 0.6], [0.9, 0.0, 0.1], [0.3, 0.0, 0.7]]);
        let y = comp(array![[0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]);
        let cfg = SolverConfig {
            init: Init::Uniform,
            ..Default::default()
        };
        let res = fit_em(&x, &y, &cfg).unwrap();
        assert_eq!(res.b.values().row(1), array![0.5, 0.5]);
        assert!(res.b.simplex_violation() <= 1e-10);
    }

    #[test]
    fn trace_is_recorded_on_request() {
        let x = comp(array![[0.2, 0.8], [0.7, 0.3], [0.5, 0.5]]);
        let y = comp(array![[0.3, 0.7], [0.6, 0.4], [0.9, 0.1]]);
        let cfg = SolverConfig {
            init: Init::Uniform,
            record_trace: true,
            ..Default::default()
        };
        let res = fit_em(&x, &y, &cfg).unwrap();
        let tr = res.trace.unwrap();
        assert_eq!(tr.len(), res.iterations + 1);
        for w in tr.windows(2) {
            assert!(w[1] - w[0] <= 1e-12);
        }
        assert!(fit_em(&x, &y, &SolverConfig::default())
            .unwrap()
            .trace
            .is_none());
    }

    #[test]
    fn row_count_mismatch() {
        let x = comp(array![[0.5, 0.5], [0.1, 0.9]]);
        let y = comp(array![[0.5, 0.5]]);
        assert!(matches!(
            fit_em(&x, &y, &SolverConfig::default()),
            Err(TflrError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn least_squares_start_on_a_face_is_lifted() {
        use crate::datagen::{generate, ScenarioKind, ScenarioSpec};
        // This data set has a least-squares fit with an exact zero that is
        // not zero at the divergence minimum.
        let s = generate(&ScenarioSpec::new(
            1000,
            5,
            3,
            ScenarioKind::Dependent,
            1007,
        ))
        .unwrap();
        let cls = crate::cls::fit_cls(&s.x, &s.y).unwrap();
        assert!(cls.values().iter().any(|&v| v == 0.0));
        let tight = SolverConfig {
            eps_converge: 1e-15,
            max_iter: 200_000,
            init: Init::Uniform,
            ..Default::default()
        };
        let best = fit_em(&s.x, &s.y, &tight).unwrap().kld;
        let fit = fit_em(&s.x, &s.y, &SolverConfig::default()).unwrap();
        assert!(fit.kld - best <= 1e-5, "{} vs {best}", fit.kld);
        let stuck = fit_em(
            &s.x,
            &s.y,
            &SolverConfig {
                init: Init::Given(cls),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(stuck.kld - best > 1e-3);
    }
}
