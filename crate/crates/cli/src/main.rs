//! `tflr`: fit, simulate and benchmark transformation-free compositional
//! regression from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 solver did not converge
//! (results are still written), 1 anything else.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tflr::datagen::ScenarioKind;
use tflr::{Init, Method, SolverConfig, Weighting};

#[derive(Parser)]
#[command(
    name = "tflr",
    version,
    about = "Compositional-on-compositional regression by EM or constrained IRLS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit B from predictor and response CSV files.
    Fit(FitArgs),
    /// Simulate a Dirichlet data set.
    Simulate(SimulateArgs),
    /// Time EM against CIRLS over a grid of sample sizes.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Floor on fitted values inside the divergence.
    #[arg(long, default_value_t = 1e-8)]
    delta: f64,
    #[arg(long = "max-iter", default_value_t = 10_000)]
    max_iter: usize,
    /// Starting coefficients.
    #[arg(long, value_enum, default_value_t = InitArg::Cls)]
    init: InitArg,
    /// CIRLS weights: 1/(mu(1-mu)) or 1/mu.
    #[arg(long, value_enum, default_value_t = WeightArg::Binomial)]
    weights: WeightArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Uniform,
    Cls,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Binomial,
    Multinomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Em,
    Cirls,
    Cls,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Independent,
    Dependent,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            eps_converge: self.eps,
            delta_guard: self.delta,
            max_iter: self.max_iter,
            init: match self.init {
                InitArg::Uniform => Init::Uniform,
                InitArg::Cls => Init::Cls,
            },
            weighting: match self.weights {
                WeightArg::Binomial => Weighting::Binomial,
                WeightArg::Multinomial => Weighting::Multinomial,
            },
            ..SolverConfig::default()
        }
    }
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Em => Method::Em,
            MethodArg::Cirls => Method::Cirls,
            MethodArg::Cls => Method::Cls,
        }
    }
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Independent => ScenarioKind::Independent,
            KindArg::Dependent => ScenarioKind::Dependent,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Predictor compositions (n x D_p).
    #[arg(long)]
    x: PathBuf,
    /// Response compositions (n x D_r).
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Cirls)]
    method: MethodArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// JSON result file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// New predictor rows to predict.
    #[arg(long = "new-x")]
    new_x: Option<PathBuf>,
    /// Where to write predictions for --new-x [default: fitted.csv next to
    /// --out, or stdout].
    #[arg(long = "fitted-out")]
    fitted_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    dp: usize,
    #[arg(long, default_value_t = 3)]
    dr: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Dependent)]
    kind: KindArg,
    /// Response concentration for the dependent kind.
    #[arg(long, default_value_t = tflr::datagen::ScenarioSpec::DEFAULT_PHI)]
    phi: f64,
    /// Predictor Dirichlet concentrations, comma separated [default: all 1].
    #[arg(long = "alpha-x", value_delimiter = ',')]
    alpha_x: Option<Vec<f64>>,
    /// Random seed; generated and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Sample sizes, comma separated and strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = tflr::bench::BenchGrid::DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Dependent)]
    kind: KindArg,
    #[arg(long, default_value_t = 5)]
    dp: usize,
    #[arg(long, default_value_t = 3)]
    dr: usize,
    #[arg(long, default_value_t = tflr::datagen::ScenarioSpec::DEFAULT_PHI)]
    phi: f64,
    /// Base seed; generated and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<io::InputError>().is_some() {
                ExitCode::from(commands::EXIT_INPUT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
