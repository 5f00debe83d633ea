//! Transformation-free linear regression for compositional data.
//!
//! Both the response `Y` and the predictors `X` are compositions (rows on the
//! simplex) and the model is `E[Y | X] = X B` with a row-stochastic
//! coefficient matrix `B`. Coefficients minimize the Kullback-Leibler
//! divergence from the observed to the fitted compositions.
//!
//! Two estimators are provided:
//!
//! * [`fit_em`]: the expectation-maximization algorithm over latent
//!   allocations of each response part to the predictor parts.
//! * [`fit_cirls`]: constrained iteratively reweighted least squares, where
//!   each reweighted least-squares step is a quadratic program over the
//!   row-stochastic constraints, solved with the dual active-set engine in
//!   [`qp`].
//!
//! [`datagen`] simulates Dirichlet data and [`bench`] times the two
//! estimators against each other.

pub mod bench;
pub mod cirls;
pub mod cls;
pub mod composition;
pub mod datagen;
pub mod em;
mod error;
mod fit;
pub mod objective;
pub mod par;
pub mod qp;

pub use cirls::fit_cirls;
pub use cls::fit_cls;
pub use composition::{
    closure, validate_composition, CoefficientMatrix, CompositionMatrix, Init, SolverConfig,
    Weighting,
};
pub use em::fit_em;
pub use error::{Result, TflrError};
pub use fit::{fit, FitResult, Method, StopReason};
pub use objective::{fitted, kld, working_loglik, FittedMatrix};
