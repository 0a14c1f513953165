//! `optmmd` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "optmmd", version, about = "Kernel two-sample tests with power-optimized kernels")]
pub struct Cli {
    /// Master seed; every output is a pure function of the flags and this seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for permutation sampling.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Result file (stdout when omitted).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic pair of samples.
    Gen(GenArgs),
    /// Run the permutation two-sample test with a given kernel.
    Test(TestArgs),
    /// Score a bandwidth grid and pick a kernel.
    Select(SelectArgs),
    /// Train a kernel by stochastic gradient ascent of the t-statistic.
    Train(TrainArgs),
    /// Rejection rates of the selection methods on Blobs.
    PowerCurve(PowerCurveArgs),
    /// Evaluate the witness function at probe points.
    Witness(WitnessArgs),
    /// Time the null samplers.
    Bench(BenchArgs),
    /// Audit the order in which a null sampler reads the kernel matrix.
    Audit(AuditArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    Blobs,
    GaussLaplace,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Samples per distribution.
    #[arg(long)]
    pub m: usize,
    /// Blobs eigenvalue ratio.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Blobs grid side.
    #[arg(long, default_value_t = 5)]
    pub grid_size: usize,
    /// Blobs center spacing.
    #[arg(long, default_value_t = 10.0)]
    pub spacing: f64,
    /// Gauss-vs-Laplace dimension.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// X output path; `.bin` selects the binary format, anything else CSV.
    #[arg(long = "x-out")]
    pub x_out: PathBuf,
    #[arg(long = "y-out")]
    pub y_out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SamplePaths {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false, id = "kernel_choice")]
pub struct KernelArgs {
    /// RBF bandwidth.
    #[arg(long, allow_negative_numbers = true)]
    pub bandwidth: Option<f64>,
    /// Median-heuristic RBF bandwidth.
    #[arg(long)]
    pub median: bool,
    /// Kernel JSON written by `select` or `train`.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub samples: SamplePaths,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Per-dimension ARD weights, used with --bandwidth.
    #[arg(long, value_delimiter = ',', requires = "bandwidth")]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Permutations B.
    #[arg(long, default_value_t = 1000)]
    pub perms: usize,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub samples: SamplePaths,
    #[arg(long, default_value = "max-t", conflicts_with = "median")]
    pub criterion: String,
    /// Log-spaced grid `lo:hi:count`; defaults to 30 points over
    /// [median / 32, median * 32].
    #[arg(long, conflicts_with = "median")]
    pub grid: Option<String>,
    /// Report the median-heuristic kernel as a single candidate.
    #[arg(long)]
    pub median: bool,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Permutations per candidate for max-power.
    #[arg(long, default_value_t = 1000)]
    pub perms: usize,
    /// Also write the chosen kernel as JSON.
    #[arg(long)]
    pub kernel_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub samples: SamplePaths,
    /// Train one weight per dimension instead of the bandwidth alone.
    #[arg(long)]
    pub ard: bool,
    /// Initial bandwidth; the median heuristic when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Minibatch size, capped at the sample size.
    #[arg(long, default_value_t = 500)]
    pub batch: usize,
    #[arg(long, default_value_t = optmmd::DEFAULT_VARIANCE_FLOOR)]
    pub floor: f64,
    /// Per-iteration t-statistic trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PowerCurveArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', default_value = "median,max-mmd,max-t")]
    pub methods: Vec<String>,
    /// Add the best fixed grid bandwidth as method `best`.
    #[arg(long)]
    pub best: bool,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub perms: usize,
    /// Permutations per candidate for max-power selection.
    #[arg(long, default_value_t = 200)]
    pub select_perms: usize,
    /// Per-replicate chosen bandwidths as CSV.
    #[arg(long)]
    pub bandwidths: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WitnessArgs {
    #[command(flatten)]
    pub samples: SamplePaths,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Probe points; X followed by Y (labeled) when omitted.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Also write the extremes report as JSON.
    #[arg(long)]
    pub extremes: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long = "m", value_delimiter = ',', default_value = "500,1000,2000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub perms: usize,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub thread_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "optimized,naive")]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub perms: usize,
    #[arg(long, default_value = "optimized")]
    pub variant: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already name their cause.
            if e.downcast_ref::<optmmd::Error>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
