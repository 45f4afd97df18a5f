//! `gmq`: discrete approximations of Gaussian mixtures with certified
//! 2-Wasserstein error bounds.
//!
//! The binary is a thin front end over `gmq-core`: subcommands parse JSON
//! artifacts, call the library, and write JSON or CSV back. Successful runs
//! exit 0 and print nothing except the requested outputs; failures print a
//! machine-readable `{"error": kind, "message": ...}` object on stderr and
//! exit 2 (bad input) or 3 (the math said no).

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Configuration, Failure};

#[derive(Parser)]
#[command(
    name = "gmq",
    version,
    about = "Quantize Gaussian mixtures with certified transport error"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scheme for a mixture and discretize it in one step.
    Quantize(QuantizeArgs),
    /// Generate a scheme set for a mixture and write it as JSON.
    GenerateScheme(GenerateSchemeArgs),
    /// Apply a scheme file to a mixture.
    Discretize(DiscretizeArgs),
    /// Run a suite of quantization cases and emit a CSV of errors and
    /// timings.
    Benchmark(BenchmarkArgs),
    /// Manage the one-dimensional quantizer lookup table.
    #[command(subcommand)]
    Tables(TablesCommand),
    /// Independent sampling-based checks of emitted artifacts.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

/// Where to find the 1D quantizer table. The flag wins over the
/// `GMQ_TABLE_PATH` environment variable; with neither, entries are
/// computed on demand.
#[derive(Args)]
struct TableArg {
    /// Prebuilt lookup table file (see `tables build`).
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
}

/// Scheme-generation knobs shared by `quantize` and `generate-scheme`.
#[derive(Args)]
struct GenerationArgs {
    /// Requested total support size.
    #[arg(long, value_name = "N")]
    size: usize,

    /// Point pattern.
    #[arg(long, value_enum, default_value_t = Configuration::Grid)]
    configuration: Configuration,

    /// One scheme per density mode, sharing points between overlapping
    /// components (the default).
    #[arg(long, overrides_with = "per_component")]
    per_mode: bool,

    /// One scheme per mixture component.
    #[arg(long, overrides_with = "per_mode")]
    per_component: bool,

    /// Distance below which converged mode candidates merge; defaults to
    /// 1% of the mixture's root-mean-square scale.
    #[arg(long, value_name = "DIST")]
    mode_merge_tol: Option<f64>,

    /// Commutator tolerance for treating a cluster's covariances as
    /// jointly diagonalizable.
    #[arg(long, value_name = "TOL")]
    homogeneity_tol: Option<f64>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Input mixture JSON file.
    #[arg(long, value_name = "FILE")]
    mixture: PathBuf,

    #[command(flatten)]
    generation: GenerationArgs,

    /// Compress the output to at most this many atoms (widens the
    /// certificate by the merge transport cost).
    #[arg(long, value_name = "K")]
    compress: Option<usize>,

    /// Attach a seeded Monte Carlo check of the certificate to the report.
    #[arg(long, value_name = "N")]
    mc_samples: Option<usize>,

    /// Seed for --mc-samples.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    mc_seed: u64,

    /// Output discrete distribution JSON file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Report JSON file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Also write the generated scheme set.
    #[arg(long, value_name = "FILE")]
    scheme_out: Option<PathBuf>,

    #[command(flatten)]
    table: TableArg,
}

#[derive(Args)]
struct GenerateSchemeArgs {
    /// Input mixture JSON file.
    #[arg(long, value_name = "FILE")]
    mixture: PathBuf,

    #[command(flatten)]
    generation: GenerationArgs,

    /// Output scheme-set JSON file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    table: TableArg,
}

#[derive(Args)]
struct DiscretizeArgs {
    /// Input mixture JSON file.
    #[arg(long, value_name = "FILE")]
    mixture: PathBuf,

    /// Scheme file: a single scheme object (shared by all components) or a
    /// scheme-set array.
    #[arg(long, value_name = "FILE")]
    scheme: PathBuf,

    /// Relative off-diagonal tolerance for alignment decisions.
    #[arg(long, value_name = "TOL")]
    alignment_tol: Option<f64>,

    /// Compress the output to at most this many atoms.
    #[arg(long, value_name = "K")]
    compress: Option<usize>,

    /// Attach a seeded Monte Carlo check of the certificate to the report.
    #[arg(long, value_name = "N")]
    mc_samples: Option<usize>,

    /// Seed for --mc-samples.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    mc_seed: u64,

    /// Output discrete distribution JSON file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Report JSON file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    #[command(flatten)]
    table: TableArg,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Suite JSON file; mixture paths inside resolve relative to it.
    #[arg(long, value_name = "FILE")]
    suite: PathBuf,

    /// Output CSV file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Run cases concurrently. Results stay deterministic, but wall-clock
    /// columns then measure contended runs and the CSV is marked
    /// accordingly.
    #[arg(long)]
    parallel: bool,

    #[command(flatten)]
    table: TableArg,
}

#[derive(Subcommand)]
enum TablesCommand {
    /// Solve the 1D quantizers for n = 1..=max-n and write them to a file.
    Build {
        /// Largest quantizer size to solve.
        #[arg(long, value_name = "N")]
        max_n: usize,

        /// Output table JSON file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Estimate the nearest-atom coupling distance between a mixture and a
    /// discrete file by seeded sampling; prints value and standard error
    /// as JSON.
    W2 {
        /// Mixture JSON file.
        #[arg(long, value_name = "FILE")]
        dist: PathBuf,

        /// Discrete distribution JSON file.
        #[arg(long, value_name = "FILE")]
        discrete: PathBuf,

        /// Sample count.
        #[arg(long, value_name = "N")]
        samples: usize,

        /// RNG seed.
        #[arg(long, value_name = "SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Quantize(args) => commands::quantize(&args),
        Command::GenerateScheme(args) => commands::generate_scheme(&args),
        Command::Discretize(args) => commands::discretize(&args),
        Command::Benchmark(args) => bench::run_benchmark(&args),
        Command::Tables(TablesCommand::Build { max_n, out }) => {
            commands::tables_build(max_n, &out)
        }
        Command::Oracle(OracleCommand::W2 {
            dist,
            discrete,
            samples,
            seed,
        }) => commands::oracle_w2(&dist, &discrete, samples, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.stderr_object());
            ExitCode::from(failure.code)
        }
    }
}
