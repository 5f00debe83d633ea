use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use tflr::bench::{self, BenchGrid, BenchOutcome, SOLVERS};
use tflr::datagen::{self, ScenarioKind, ScenarioSpec};
use tflr::{fitted, FitResult, Init, Method, SolverConfig, TflrError};

use crate::io::{self, InputError};
use crate::{BenchArgs, FitArgs, SimulateArgs};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

/// Errors caused by the user's input rather than by a solver.
fn classify(e: TflrError) -> anyhow::Error {
    match e {
        TflrError::DimensionMismatch(_)
        | TflrError::InvalidConfig(_)
        | TflrError::InvalidSpec(_)
        | TflrError::InvalidAlpha(_)
        | TflrError::InvalidGrid(_) => InputError(e.to_string()).into(),
        other => other.into(),
    }
}

fn seed_or_random(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            (s, true)
        }
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn config_json(c: &SolverConfig) -> Value {
    json!({
        "eps": c.eps_converge,
        "delta": c.delta_guard,
        "eta": c.eta_clamp,
        "max_iter": c.max_iter,
        "init": match c.init {
            Init::Uniform => "uniform",
            Init::Cls => "cls",
            Init::Given(_) => "given",
        },
        "weights": c.weighting.to_string(),
    })
}

fn fit_json(
    r: &FitResult,
    predictors: &[String],
    responses: &[String],
    config: &SolverConfig,
) -> Value {
    let rows: Vec<Vec<f64>> =
        r.b.values()
            .rows()
            .into_iter()
            .map(|row| row.to_vec())
            .collect();
    json!({
        "method": r.method,
        "B": {
            "predictors": predictors,
            "responses": responses,
            "values": rows,
        },
        "kld": r.kld,
        "iterations": r.iterations,
        "elapsed_s": r.elapsed.as_secs_f64(),
        "converged": r.converged,
        "stop": r.stop,
        "config": config_json(config),
    })
}

pub fn fit(a: FitArgs) -> Result<ExitCode> {
    let config = a.solver.config();
    config.validate().map_err(classify)?;
    let x = io::read_composition(&a.x)?;
    let y = io::read_composition(&a.y)?;
    let new_x = a.new_x.as_deref().map(io::read_composition).transpose()?;
    if let Some(nx) = &new_x {
        if nx.ncols() != x.ncols() {
            return Err(InputError(format!(
                "{}: has {} columns but the predictors have {}",
                a.new_x.as_ref().unwrap().display(),
                nx.ncols(),
                x.ncols()
            ))
            .into());
        }
    }
    let method = Method::from(a.method);
    let result = tflr::fit(method, &x, &y, &config).map_err(classify)?;

    let (xn, yn) = (io::names_or_default(&x, "x"), io::names_or_default(&y, "y"));
    let doc = fit_json(&result, &xn, &yn, &config);
    match &a.out {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }

    if let Some(nx) = new_x {
        let m = fitted(&nx, &result.b)?;
        let target = a
            .fitted_out
            .clone()
            .or_else(|| a.out.as_ref().map(|p| sibling(p, "fitted.csv")));
        match target {
            Some(p) => io::write_matrix(&p, &yn, m.values())?,
            None => {
                println!("{}", yn.join(","));
                for row in m.values().rows() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    println!("{}", cells.join(","));
                }
            }
        }
    }

    if !result.converged {
        eprintln!(
            "warning: {method} reached {} iterations without converging",
            result.iterations
        );
        return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .map(|d| d.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

pub fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let (seed, generated) = seed_or_random(a.seed);
    let spec = ScenarioSpec {
        alpha_x: a.alpha_x,
        phi: a.phi,
        ..ScenarioSpec::new(a.n, a.dp, a.dr, ScenarioKind::from(a.kind), seed)
    };
    let data = datagen::generate(&spec).map_err(classify)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let xn = io::default_names("x", spec.dp);
    let yn = io::default_names("y", spec.dr);
    io::write_matrix(&a.out.join("X.csv"), &xn, data.x.values())?;
    io::write_matrix(&a.out.join("Y.csv"), &yn, data.y.values())?;
    if let Some(b) = &data.b_true {
        io::write_matrix(&a.out.join("B_true.csv"), &yn, b.values())?;
    }
    write_json(
        &a.out.join("meta.json"),
        &json!({
            "spec": spec,
            "seed_generated": generated,
            "files": {
                "x": "X.csv",
                "y": "Y.csv",
                "b_true": data.b_true.as_ref().map(|_| "B_true.csv"),
            },
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let config = a.solver.config();
    config.validate().map_err(classify)?;
    let (seed, generated) = seed_or_random(a.seed);
    let grid = BenchGrid {
        replicates: a.replicates,
        phi: a.phi,
        ..BenchGrid::new(a.sizes, a.dp, a.dr, ScenarioKind::from(a.kind), seed)
    };
    grid.validate().map_err(classify)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let resolution = bench::timer_resolution();
    let outcome = bench::run_grid(&grid, &config).map_err(classify)?;
    write_records(&a.out.join("records.csv"), &outcome)?;

    let speedup = bench::speedup(&outcome.records);
    let mut summary = json!({
        "grid": grid,
        "config": config_json(&config),
        "seed_generated": generated,
        "timer_resolution_s": resolution.as_secs_f64(),
        "records": outcome.records.len(),
        "errors": outcome.errors,
    });
    match &speedup {
        Ok(s) => {
            summary["speedup"] = json!(s
                .iter()
                .map(|(n, v)| json!({"n": n, "speedup": v}))
                .collect::<Vec<_>>());
            let mut w = csv::Writer::from_path(a.out.join("figure.csv"))?;
            w.write_record(["n", "speedup"])?;
            for (n, v) in s {
                w.write_record([n.to_string(), v.to_string()])?;
            }
            w.flush()?;
        }
        Err(e) => summary["speedup_note"] = json!(e.to_string()),
    }
    if let Ok(p) = bench::pairs(&outcome.records) {
        let worst = p
            .values()
            .map(|(e, c)| (e.kld - c.kld).abs())
            .fold(0.0, f64::max);
        summary["max_kld_discrepancy"] = json!(worst);
    }
    let mut notes = Vec::new();
    for m in SOLVERS {
        match bench::fit_scaling(&outcome.records, m) {
            Ok(f) => {
                summary[format!("scaling_{m}")] = json!(f);
                summary[format!("beta_{m}")] = json!(f.beta);
            }
            Err(e) => notes.push(format!("{m}: {e}")),
        }
    }
    if !notes.is_empty() {
        summary["scaling_note"] = json!(format!("scaling fit omitted ({})", notes.join("; ")));
    }
    write_json(&a.out.join("summary.json"), &summary)?;
    if !outcome.errors.is_empty() {
        eprintln!("{} cell(s) failed; see summary.json", outcome.errors.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_records(path: &Path, outcome: &BenchOutcome) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "n",
        "solver",
        "replicate",
        "seed",
        "elapsed_s",
        "kld",
        "iterations",
    ])?;
    for r in &outcome.records {
        w.write_record([
            r.n.to_string(),
            r.solver.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.elapsed.to_string(),
            r.kld.to_string(),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
