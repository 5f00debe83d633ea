//! Dirichlet simulation of predictor/response pairs.
//!
//! Every random stream is a ChaCha8 generator keyed by the scenario seed and
//! split into numbered streams per role and per chunk of rows, so the output
//! depends only on the seed and never on the number of worker threads.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::composition::{CoefficientMatrix, CompositionMatrix};
use crate::error::{Result, TflrError};
use crate::objective::fitted_row;
use crate::par;

/// Gamma draws below this are treated as exact zeros.
const FLUSH: f64 = 1e-300;

/// Redraw budget for a row whose every gamma draw underflowed.
const MAX_REDRAWS: usize = 1000;

const ROLE_X: u64 = 1;
const ROLE_Y: u64 = 2;
const ROLE_B: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// `X` and `Y` drawn from separate uniform Dirichlet streams.
    Independent,
    /// `Y_i ~ Dirichlet(phi * x_i B_true)`, so `E[Y | X] = X B_true`.
    Dependent,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "independent" => Ok(ScenarioKind::Independent),
            "dependent" => Ok(ScenarioKind::Dependent),
            other => Err(format!(
                "unknown kind `{other}` (expected independent or dependent)"
            )),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::Independent => "independent",
            ScenarioKind::Dependent => "dependent",
        })
    }
}

/// Parameters of one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub dp: usize,
    pub dr: usize,
    pub kind: ScenarioKind,
    /// Dirichlet concentration of the predictors; `None` means all ones.
    pub alpha_x: Option<Vec<f64>>,
    /// Response concentration around the mean `x_i B_true`.
    pub phi: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub const DEFAULT_PHI: f64 = 50.0;

    pub fn new(n: usize, dp: usize, dr: usize, kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            n,
            dp,
            dr,
            kind,
            alpha_x: None,
            phi: Self::DEFAULT_PHI,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(TflrError::InvalidSpec("n must be at least 1".into()));
        }
        if self.dp < 2 || self.dr < 2 {
            return Err(TflrError::InvalidSpec(format!(
                "need at least 2 components on each side, got D_p = {}, D_r = {}",
                self.dp, self.dr
            )));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(TflrError::InvalidSpec(format!(
                "phi must be positive, got {}",
                self.phi
            )));
        }
        if let Some(a) = &self.alpha_x {
            if a.len() != self.dp {
                return Err(TflrError::InvalidSpec(format!(
                    "alpha_x has {} entries, expected {}",
                    a.len(),
                    self.dp
                )));
            }
            check_alpha(a).map_err(|e| TflrError::InvalidSpec(e.to_string()))?;
        }
        Ok(())
    }

    fn alpha_x(&self) -> Vec<f64> {
        self.alpha_x.clone().unwrap_or_else(|| vec![1.0; self.dp])
    }
}

/// A simulated data set; `b_true` is present for the dependent kind only.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub x: CompositionMatrix,
    pub y: CompositionMatrix,
    pub b_true: Option<CoefficientMatrix>,
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.len() < 2 {
        return Err(TflrError::InvalidAlpha(format!(
            "need at least 2 components, got {}",
            alpha.len()
        )));
    }
    if let Some((i, a)) = alpha
        .iter()
        .enumerate()
        .find(|(_, a)| !(**a > 0.0 && a.is_finite()))
    {
        return Err(TflrError::InvalidAlpha(format!(
            "alpha[{i}] = {a} is not a positive number"
        )));
    }
    Ok(())
}

fn stream(seed: u64, role: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((role << 32) | chunk as u64);
    rng
}

/// Draws one Dirichlet vector into `out` by normalizing independent gamma
/// variates. Zero shapes yield exact zeros.
fn draw_row(rng: &mut ChaCha8Rng, shapes: &[f64], out: &mut [f64]) -> Result<()> {
    for _ in 0..MAX_REDRAWS {
        let mut sum = 0.0;
        for (o, &a) in out.iter_mut().zip(shapes) {
            let g = if a > 0.0 {
                Gamma::new(a, 1.0)
                    .map_err(|e| TflrError::InvalidAlpha(e.to_string()))?
                    .sample(rng)
            } else {
                0.0
            };
            *o = if g < FLUSH { 0.0 } else { g };
            sum += *o;
        }
        if sum > 0.0 {
            out.iter_mut().for_each(|o| *o /= sum);
            return Ok(());
        }
    }
    Err(TflrError::InvalidAlpha(
        "concentration too small: every gamma draw underflowed".into(),
    ))
}

/// Fills an n x D matrix chunk by chunk; `shapes(i, buf)` writes the Dirichlet
/// parameters of row `i`.
fn sample_rows<S>(n: usize, d: usize, seed: u64, role: u64, shapes: S) -> Result<Array2<f64>>
where
    S: Fn(usize, &mut [f64]) + Sync + Send,
{
    let parts = par::map_chunks(n, |c, range| -> Result<Vec<f64>> {
        let mut rng = stream(seed, role, c);
        let mut out = vec![0.0; range.len() * d];
        let mut a = vec![0.0; d];
        for (i, row) in range.zip(out.chunks_exact_mut(d)) {
            shapes(i, &mut a);
            draw_row(&mut rng, &a, row)?;
        }
        Ok(out)
    });
    let mut data = Vec::with_capacity(n * d);
    for p in parts {
        data.extend(p?);
    }
    Ok(Array2::from_shape_vec((n, d), data).expect("chunks cover every row"))
}

/// `n` independent draws from Dirichlet(`alpha`).
pub fn sample_dirichlet(alpha: &[f64], n: usize, seed: u64) -> Result<CompositionMatrix> {
    sample_dirichlet_role(alpha, n, seed, ROLE_X)
}

fn sample_dirichlet_role(
    alpha: &[f64],
    n: usize,
    seed: u64,
    role: u64,
) -> Result<CompositionMatrix> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(TflrError::Empty);
    }
    let v = sample_rows(n, alpha.len(), seed, role, |_, a| a.copy_from_slice(alpha))?;
    Ok(CompositionMatrix::from_closed(v))
}

/// Simulates one data set.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let x = sample_dirichlet_role(&spec.alpha_x(), spec.n, spec.seed, ROLE_X)?;
    match spec.kind {
        ScenarioKind::Independent => {
            let y = sample_dirichlet_role(&vec![1.0; spec.dr], spec.n, spec.seed, ROLE_Y)?;
            Ok(Scenario { x, y, b_true: None })
        }
        ScenarioKind::Dependent => {
            let b = sample_dirichlet_role(&vec![1.0; spec.dr], spec.dp, spec.seed, ROLE_B)?;
            let b = CoefficientMatrix::from_solver(b.into_values());
            let (xs, bs, phi) = (x.as_slice(), b.as_slice(), spec.phi);
            let (dp, dr) = (spec.dp, spec.dr);
            let y = sample_rows(spec.n, dr, spec.seed, ROLE_Y, |i, a| {
                fitted_row(&xs[i * dp..(i + 1) * dp], bs, a);
                a.iter_mut().for_each(|v| *v *= phi);
            })?;
            Ok(Scenario {
                x,
                y: CompositionMatrix::from_closed(y),
                b_true: Some(b),
            })
        }
    }
}
