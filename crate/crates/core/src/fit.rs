use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;

use crate::composition::{CoefficientMatrix, CompositionMatrix, Init, SolverConfig};
use crate::error::{Result, TflrError};
use crate::{cirls, cls, em};

/// Which estimator produced a [`FitResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Em,
    Cirls,
    Cls,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Em => "em",
            Method::Cirls => "cirls",
            Method::Cls => "cls",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "em" => Ok(Method::Em),
            "cirls" => Ok(Method::Cirls),
            "cls" => Ok(Method::Cls),
            other => Err(format!(
                "unknown method `{other}` (expected em, cirls or cls)"
            )),
        }
    }
}

/// Why an iterative fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// L1 change of the coefficients fell below tolerance.
    ParameterChange,
    /// Change of the objective fell below tolerance.
    ObjectiveChange,
    MaxIter,
    /// Non-iterative fit.
    Direct,
}

/// Output shared by every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub b: CoefficientMatrix,
    /// `kld(Y, X B)` recomputed from the returned coefficients.
    pub kld: f64,
    pub iterations: usize,
    pub elapsed: Duration,
    pub converged: bool,
    pub stop: StopReason,
    /// Objective after each iteration, starting with the initial value.
    pub trace: Option<Vec<f64>>,
}

/// Runs the chosen estimator.
pub fn fit(
    method: Method,
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    config: &SolverConfig,
) -> Result<FitResult> {
    match method {
        Method::Em => em::fit_em(x, y, config),
        Method::Cirls => cirls::fit_cirls(x, y, config),
        Method::Cls => cls::fit_cls_result(x, y, config),
    }
}

pub(crate) fn check_pair(x: &CompositionMatrix, y: &CompositionMatrix) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(TflrError::DimensionMismatch(format!(
            "X has {} rows but Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

pub(crate) fn initial_coefficients(
    x: &CompositionMatrix,
    y: &CompositionMatrix,
    init: &Init,
) -> Result<CoefficientMatrix> {
    match init {
        Init::Uniform => Ok(CoefficientMatrix::uniform(x.ncols(), y.ncols())),
        Init::Cls => cls::fit_cls(x, y),
        Init::Given(b) => {
            if b.nrows() != x.ncols() || b.ncols() != y.ncols() {
                return Err(TflrError::DimensionMismatch(format!(
                    "initial B is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    x.ncols(),
                    y.ncols()
                )));
            }
            Ok(b.clone())
        }
    }
}
