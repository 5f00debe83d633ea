//! Paired timing of the EM and CIRLS estimators over a sample-size grid.
//!
//! Each cell `(n, replicate)` simulates one data set and fits it with both
//! solvers, so speed-up ratios and divergence differences compare identical
//! inputs. Fits run one at a time; only the fit call is timed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::composition::SolverConfig;
use crate::datagen::{generate, ScenarioKind, ScenarioSpec};
use crate::error::{Result, TflrError};
use crate::fit::{fit, Method};

/// The two timed solvers, in the order they run within a cell.
pub const SOLVERS: [Method; 2] = [Method::Em, Method::Cirls];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchGrid {
    /// Strictly increasing sample sizes.
    pub sizes: Vec<usize>,
    pub dp: usize,
    pub dr: usize,
    pub kind: ScenarioKind,
    pub replicates: usize,
    pub base_seed: u64,
    /// Response concentration for the dependent kind.
    pub phi: f64,
}

impl BenchGrid {
    pub const DEFAULT_REPLICATES: usize = 20;

    pub fn new(
        sizes: Vec<usize>,
        dp: usize,
        dr: usize,
        kind: ScenarioKind,
        base_seed: u64,
    ) -> Self {
        BenchGrid {
            sizes,
            dp,
            dr,
            kind,
            replicates: Self::DEFAULT_REPLICATES,
            base_seed,
            phi: ScenarioSpec::DEFAULT_PHI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(TflrError::InvalidGrid("no sample sizes given".into()));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return Err(TflrError::InvalidGrid(format!(
                "sample size {n} is below 2"
            )));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TflrError::InvalidGrid(
                "sizes must be strictly increasing".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(TflrError::InvalidGrid(
                "replicates must be at least 1".into(),
            ));
        }
        self.spec(self.sizes[0], 0)
            .validate()
            .map_err(|e| TflrError::InvalidGrid(e.to_string()))
    }

    /// Seed of cell `(size_index, replicate)`, shared by both solvers.
    pub fn seed(&self, size_index: usize, replicate: usize) -> u64 {
        let cell = (size_index * self.replicates + replicate) as u64;
        self.base_seed
            .wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn spec(&self, n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            phi: self.phi,
            ..ScenarioSpec::new(n, self.dp, self.dr, self.kind, seed)
        }
    }
}

/// One timed fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub n: usize,
    pub solver: Method,
    /// Wall-clock seconds spent in the fit call.
    pub elapsed: f64,
    pub kld: f64,
    pub iterations: usize,
    pub replicate: usize,
    pub seed: u64,
}

/// A cell that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    /// `None` when data generation failed.
    pub solver: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub errors: Vec<CellError>,
}

/// Runs every cell of the grid.
///
/// One untimed warm-up fit per solver precedes the first cell. Failures are
/// collected per cell; the rest of the grid still runs.
pub fn run_grid(grid: &BenchGrid, config: &SolverConfig) -> Result<BenchOutcome> {
    grid.validate()?;
    config.validate()?;
    let mut out = BenchOutcome::default();

    if let Ok(s) = generate(&grid.spec(grid.sizes[0], grid.seed(0, 0))) {
        for m in SOLVERS {
            let _ = fit(m, &s.x, &s.y, config);
        }
    }

    for (si, &n) in grid.sizes.iter().enumerate() {
        for r in 0..grid.replicates {
            let seed = grid.seed(si, r);
            let data = match generate(&grid.spec(n, seed)) {
                Ok(d) => d,
                Err(e) => {
                    out.errors.push(CellError {
                        n,
                        replicate: r,
                        seed,
                        solver: None,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            for m in SOLVERS {
                let start = Instant::now();
                let res = fit(m, &data.x, &data.y, config);
                let elapsed = start.elapsed();
                match res {
                    Ok(f) => out.records.push(BenchRecord {
                        n,
                        solver: m,
                        elapsed: elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
                        kld: f.kld,
                        iterations: f.iterations.max(1),
                        replicate: r,
                        seed,
                    }),
                    Err(e) => out.errors.push(CellError {
                        n,
                        replicate: r,
                        seed,
                        solver: Some(m),
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(out)
}

type CellKey = (usize, usize, u64);

/// Groups records into `(em, cirls)` pairs keyed by `(n, replicate, seed)`.
pub fn pairs(records: &[BenchRecord]) -> Result<BTreeMap<CellKey, (BenchRecord, BenchRecord)>> {
    let mut em = BTreeMap::new();
    let mut cirls = BTreeMap::new();
    for r in records {
        let key = (r.n, r.replicate, r.seed);
        let slot = match r.solver {
            Method::Em => &mut em,
            Method::Cirls => &mut cirls,
            Method::Cls => continue,
        };
        if slot.insert(key, r.clone()).is_some() {
            return Err(TflrError::UnpairedRecords(format!(
                "duplicate {} record for n = {}, replicate {}",
                r.solver, r.n, r.replicate
            )));
        }
    }
    if em.len() != cirls.len() {
        return Err(TflrError::UnpairedRecords(format!(
            "{} em records but {} cirls records",
            em.len(),
            cirls.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (key, e) in em {
        let c = cirls.remove(&key).ok_or_else(|| {
            TflrError::UnpairedRecords(format!(
                "no cirls record for n = {}, replicate {}, seed {}",
                key.0, key.1, key.2
            ))
        })?;
        out.insert(key, (e, c));
    }
    Ok(out)
}

/// Mean over replicates of `elapsed_em / elapsed_cirls`, per sample size.
pub fn speedup(records: &[BenchRecord]) -> Result<BTreeMap<usize, f64>> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ((n, _, _), (e, c)) in pairs(records)? {
        let s = sums.entry(n).or_default();
        s.0 += e.elapsed / c.elapsed;
        s.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(n, (s, k))| (n, s / k as f64))
        .collect())
}

/// `log t = alpha + beta log n`, fitted to per-size mean times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of log mean time on log sample size for one
/// solver.
pub fn fit_scaling(records: &[BenchRecord], solver: Method) -> Result<ScalingFit> {
    let mut by_size: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.solver == solver) {
        let s = by_size.entry(r.n).or_default();
        s.0 += r.elapsed;
        s.1 += 1;
    }
    if by_size.len() < 3 {
        return Err(TflrError::InsufficientSizes {
            found: by_size.len(),
        });
    }
    let pts: Vec<(f64, f64)> = by_size
        .into_iter()
        .map(|(n, (s, k))| ((n as f64).ln(), (s / k as f64).ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(ScalingFit {
        alpha,
        beta,
        r_squared,
    })
}

/// Smallest nonzero step observed between successive [`Instant`] readings.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..100 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}
