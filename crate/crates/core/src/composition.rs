//! Compositions, row-stochastic coefficient matrices and solver settings.
//!
//! A composition is a non-negative vector whose parts sum to one. Both the
//! responses `Y` (n x D_r) and the predictors `X` (n x D_p) are stored as
//! [`CompositionMatrix`] values, one composition per row. The regression
//! coefficients form a D_p x D_r [`CoefficientMatrix`] whose rows are
//! themselves compositions.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Result, TflrError};

/// Row-sum tolerance applied to data read from disk.
pub const INGEST_TOL: f64 = 1e-8;

/// Row-sum tolerance met by coefficient matrices the solvers produce.
pub const SOLVER_TOL: f64 = 1e-10;

/// An n x D matrix whose rows lie on the standard simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    values: Array2<f64>,
    names: Option<Vec<String>>,
}

/// Checks that every row of `values` is a composition and wraps it.
///
/// Entries are never rescaled: a matrix that fails the check is rejected, not
/// repaired. Use [`closure`] to normalize raw amounts.
pub fn validate_composition(values: Array2<f64>, tol: f64) -> Result<CompositionMatrix> {
    check_shape(&values)?;
    for (i, row) in values.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(TflrError::NonFiniteEntry { row: i, col: j });
            }
            if v < -tol {
                return Err(TflrError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(TflrError::RowSumViolation { row: i, sum, tol });
        }
    }
    Ok(CompositionMatrix {
        values,
        names: None,
    })
}

/// Divides each row by its total.
pub fn closure(values: ArrayView2<'_, f64>) -> Result<CompositionMatrix> {
    check_shape(&values)?;
    let mut out = values.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(TflrError::NonFiniteEntry { row: i, col: j });
            }
            if v < 0.0 {
                return Err(TflrError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if sum <= 0.0 {
            return Err(TflrError::ZeroRowSum { row: i });
        }
        row.mapv_inplace(|v| v / sum);
    }
    Ok(CompositionMatrix {
        values: out,
        names: None,
    })
}

fn check_shape<S: ndarray::Data<Elem = f64>>(
    values: &ndarray::ArrayBase<S, ndarray::Ix2>,
) -> Result<()> {
    if values.nrows() == 0 {
        return Err(TflrError::Empty);
    }
    if values.ncols() < 2 {
        return Err(TflrError::TooFewComponents {
            cols: values.ncols(),
        });
    }
    Ok(())
}

impl CompositionMatrix {
    /// Attaches component labels. Labels are carried along but never used in
    /// any computation.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols() {
            return Err(TflrError::DimensionMismatch(format!(
                "{} component names for {} columns",
                names.len(),
                self.ncols()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Row-major contiguous storage, used by the hot loops.
    pub(crate) fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("composition matrices are stored in standard layout")
    }

    /// Wraps a matrix already known to be closed (generator output).
    pub(crate) fn from_closed(values: Array2<f64>) -> Self {
        let values = values.as_standard_layout().into_owned();
        CompositionMatrix {
            values,
            names: None,
        }
    }
}

/// A D_p x D_r matrix with non-negative entries and unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    values: Array2<f64>,
}

impl CoefficientMatrix {
    /// Validates a user-supplied coefficient matrix.
    pub fn new(values: Array2<f64>, tol: f64) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(TflrError::Empty);
        }
        if values.ncols() < 2 {
            return Err(TflrError::TooFewComponents {
                cols: values.ncols(),
            });
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TflrError::NonFiniteEntry { row: i, col: j });
                }
                if v < -tol {
                    return Err(TflrError::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(TflrError::RowSumViolation { row: i, sum, tol });
            }
        }
        let values = values.as_standard_layout().into_owned();
        Ok(CoefficientMatrix { values })
    }

    /// Every entry 1/D_r, so each row is the barycentre of the simplex.
    pub fn uniform(dp: usize, dr: usize) -> Self {
        CoefficientMatrix {
            values: Array2::from_elem((dp, dr), 1.0 / dr as f64),
        }
    }

    /// Cleans a solver iterate: entries within rounding of zero are clipped
    /// and each row is re-closed.
    pub(crate) fn from_solver(mut values: Array2<f64>) -> Self {
        let dr = values.ncols();
        for mut row in values.rows_mut() {
            row.mapv_inplace(|v| v.max(0.0));
            let sum: f64 = row.sum();
            if sum > 0.0 {
                row.mapv_inplace(|v| v / sum);
            } else {
                row.fill(1.0 / dr as f64);
            }
        }
        CoefficientMatrix { values }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("coefficient matrices are stored in standard layout")
    }

    /// Largest deviation from the row-stochastic constraints: the maximum of
    /// `|row sum - 1|` and of `-entry` over negative entries.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for row in self.values.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
            for &v in row {
                worst = worst.max(-v).max(v - 1.0);
            }
        }
        worst
    }

    /// Entrywise L1 distance.
    pub fn l1_distance(&self, other: &CoefficientMatrix) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// How a solver picks its first coefficient matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    Uniform,
    /// Simplex-constrained least squares fit.
    #[default]
    Cls,
    Given(CoefficientMatrix),
}

/// Variance function behind the CIRLS weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `1 / (mu (1 - mu))`: each response part as a binomial-type response.
    #[default]
    Binomial,
    /// `1 / mu`: its fixed point is the minimum-divergence fit.
    Multinomial,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "binomial" => Ok(Weighting::Binomial),
            "multinomial" => Ok(Weighting::Multinomial),
            other => Err(format!(
                "unknown weighting `{other}` (expected binomial or multinomial)"
            )),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Binomial => "binomial",
            Weighting::Multinomial => "multinomial",
        })
    }
}

/// Tolerances and limits shared by both estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Convergence tolerance on the objective (and, for EM, on the L1 change
    /// of the coefficients).
    pub eps_converge: f64,
    /// Floor applied to fitted values inside logarithms and ratios.
    pub delta_guard: f64,
    /// Fitted means are clamped to `[eta, 1 - eta]` before forming weights.
    pub eta_clamp: f64,
    pub max_iter: usize,
    pub init: Init,
    /// CIRLS weighting; ignored by EM.
    pub weighting: Weighting,
    /// Keep the per-iteration KLD values in [`crate::FitResult::trace`].
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_converge: 1e-8,
            delta_guard: 1e-8,
            eta_clamp: 1e-10,
            max_iter: 10_000,
            init: Init::Cls,
            weighting: Weighting::Binomial,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_converge.is_nan() || self.eps_converge <= 0.0 {
            return Err(TflrError::InvalidConfig(format!(
                "eps_converge must be positive, got {}",
                self.eps_converge
            )));
        }
        if self.delta_guard.is_nan() || self.delta_guard <= 0.0 {
            return Err(TflrError::InvalidConfig(format!(
                "delta_guard must be positive, got {}",
                self.delta_guard
            )));
        }
        if !(self.eta_clamp > 0.0 && self.eta_clamp < 0.5) {
            return Err(TflrError::InvalidConfig(format!(
                "eta_clamp must lie in (0, 0.5), got {}",
                self.eta_clamp
            )));
        }
        if self.max_iter == 0 {
            return Err(TflrError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
