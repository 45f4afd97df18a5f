//! Subcommand implementations: file I/O, option assembly, report emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use gmq_core::discretize::DEFAULT_ALIGNMENT_TOL;
use gmq_core::oracle::{mc_coupling_cost, McEstimate};
use gmq_core::wire;
use gmq_core::{
    discretize_mixture, generate_scheme_mixture, DiscretizeOptions, Error, GenerateOptions,
    LookupTable1D, McOptions, Pattern, QuantizationResult, W2Certificate,
};
use serde::Serialize;

use crate::{DiscretizeArgs, GenerateSchemeArgs, GenerationArgs, QuantizeArgs, TableArg};

/// Atoms below this probability are dropped when a discrete distribution
/// is exported to a file; the survivors are renormalized and the report
/// notes the adjustment.
pub const PRUNE_TOL: f64 = 1e-15;

// ---------------------------------------------------------------------------
// Failure mapping
// ---------------------------------------------------------------------------

/// A failed run: what to print on stderr and which code to exit with.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

/// Input problems (unreadable files, unparsable JSON, invalid artifacts)
/// exit 2; failures of the mathematics on well-formed input exit 3.
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_MATH: u8 = 3;

impl Failure {
    pub fn stderr_object(&self) -> String {
        serde_json::json!({"error": self.kind, "message": self.message}).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let kind = match &e {
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            e if e.is_input_error() => "input",
            _ => "math",
        };
        Failure {
            kind,
            code: if kind == "math" { EXIT_MATH } else { EXIT_INPUT },
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        kind: "io",
        code: EXIT_INPUT,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        kind: "io",
        code: EXIT_INPUT,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

// ---------------------------------------------------------------------------
// Shared option assembly
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Configuration {
    Grid,
    Cross,
}

impl From<Configuration> for Pattern {
    fn from(c: Configuration) -> Pattern {
        match c {
            Configuration::Grid => Pattern::Grid,
            Configuration::Cross => Pattern::Cross,
        }
    }
}

impl GenerationArgs {
    fn to_options(&self) -> GenerateOptions {
        let mut opts = GenerateOptions {
            pattern: self.configuration.into(),
            per_mode: !self.per_component,
            ..GenerateOptions::default()
        };
        if self.mode_merge_tol.is_some() {
            opts.mode_merge_tol = self.mode_merge_tol;
        }
        if let Some(tol) = self.homogeneity_tol {
            opts.homogeneity_tol = tol;
        }
        opts
    }
}

impl TableArg {
    /// The flag wins over `GMQ_TABLE_PATH`; an explicit flag must point at
    /// an existing table, the environment variable may point at a path
    /// that is not built yet.
    pub fn load(&self) -> Result<LookupTable1D, Failure> {
        if let Some(path) = &self.table {
            return Ok(LookupTable1D::load(path)?);
        }
        match std::env::var_os("GMQ_TABLE_PATH").map(PathBuf::from) {
            Some(path) if path.exists() => Ok(LookupTable1D::load(&path)?),
            _ => Ok(LookupTable1D::new()),
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct Timings {
    /// Wall time of scheme generation, absent when a prebuilt scheme was
    /// applied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<f64>,
    pub discretization: f64,
}

#[derive(Serialize)]
pub struct Report {
    /// Certified 2-Wasserstein distance; null when no certificate exists.
    pub w2: Option<f64>,
    pub kind: &'static str,
    pub support_size: usize,
    pub per_component_sq_errors: Vec<f64>,
    pub timings_ms: Timings,
    /// Export-time pruning of dust atoms, present only when it happened.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned_atoms: Option<usize>,
    /// Probability mass renormalized away by the pruning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_check: Option<McEstimate>,
}

pub fn certificate_kind(cert: &W2Certificate) -> &'static str {
    match cert {
        W2Certificate::Exact(_) => "exact",
        W2Certificate::UpperBound { .. } => "upper_bound",
        W2Certificate::Unavailable => "unavailable",
    }
}

/// Write the discrete file (pruned) and the report (to the given path, or
/// stdout when none).
fn write_outputs(
    result: &QuantizationResult,
    generation_ms: Option<f64>,
    discretization_ms: f64,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<(), Failure> {
    let (discrete, pruned_atoms, pruned_mass) = prune_for_export(&result.discrete)?;
    write(out, &wire::discrete_to_json(&discrete))?;
    let report = Report {
        w2: result.certificate.value(),
        kind: certificate_kind(&result.certificate),
        support_size: discrete.len(),
        per_component_sq_errors: result.per_component_sq_errors.clone(),
        timings_ms: Timings {
            generation: generation_ms,
            discretization: discretization_ms,
        },
        pruned_atoms: (pruned_atoms > 0).then_some(pruned_atoms),
        pruned_mass: (pruned_atoms > 0).then_some(pruned_mass),
        mc_check: result.mc_check,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match report_path {
        Some(path) => write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Drop atoms with probability below [`PRUNE_TOL`] and renormalize the
/// rest. Returns the exported distribution, the dropped count, and the
/// dropped mass.
fn prune_for_export(
    discrete: &gmq_core::DiscreteDistribution,
) -> Result<(gmq_core::DiscreteDistribution, usize, f64), Failure> {
    let keep: Vec<usize> = (0..discrete.len())
        .filter(|&i| discrete.probs()[i] >= PRUNE_TOL)
        .collect();
    if keep.len() == discrete.len() {
        return Ok((discrete.clone(), 0, 0.0));
    }
    let dropped = discrete.len() - keep.len();
    let dropped_mass: f64 = discrete
        .probs()
        .iter()
        .filter(|p| **p < PRUNE_TOL)
        .sum();
    let kept_mass: f64 = keep.iter().map(|&i| discrete.probs()[i]).sum();
    let locations = keep.iter().map(|&i| discrete.locations()[i].clone()).collect();
    let probs = keep.iter().map(|&i| discrete.probs()[i] / kept_mass).collect();
    let pruned = gmq_core::DiscreteDistribution::new(locations, probs)?;
    Ok((pruned, dropped, dropped_mass))
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

pub fn quantize(args: &QuantizeArgs) -> Result<(), Failure> {
    let mixture = wire::mixture_from_json(&read(&args.mixture)?)?;
    let table = args.table.load()?;
    let opts = args.generation.to_options();

    let start = Instant::now();
    let set = generate_scheme_mixture(&mixture, args.generation.size, &opts, &table)?;
    let generation_ms = elapsed_ms(start);
    if let Some(path) = &args.scheme_out {
        write(path, &wire::scheme_set_to_json(&set))?;
    }

    let dopts = DiscretizeOptions {
        alignment_tol: DEFAULT_ALIGNMENT_TOL,
        compress: args.compress,
        mc_check: args.mc_samples.map(|samples| McOptions {
            samples,
            seed: args.mc_seed,
        }),
    };
    let start = Instant::now();
    let result = discretize_mixture(&mixture, &set, &table, &dopts)?;
    let discretization_ms = elapsed_ms(start);

    write_outputs(
        &result,
        Some(generation_ms),
        discretization_ms,
        &args.out,
        args.report.as_deref(),
    )
}

pub fn generate_scheme(args: &GenerateSchemeArgs) -> Result<(), Failure> {
    let mixture = wire::mixture_from_json(&read(&args.mixture)?)?;
    let table = args.table.load()?;
    let opts = args.generation.to_options();
    let set = generate_scheme_mixture(&mixture, args.generation.size, &opts, &table)?;
    let json = wire::scheme_set_to_json(&set);
    match &args.out {
        Some(path) => write(path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

pub fn discretize(args: &DiscretizeArgs) -> Result<(), Failure> {
    let mixture = wire::mixture_from_json(&read(&args.mixture)?)?;
    let set = wire::scheme_draft_from_json(&read(&args.scheme)?)?.resolve(&mixture)?;
    let table = args.table.load()?;
    let dopts = DiscretizeOptions {
        alignment_tol: args.alignment_tol.unwrap_or(DEFAULT_ALIGNMENT_TOL),
        compress: args.compress,
        mc_check: args.mc_samples.map(|samples| McOptions {
            samples,
            seed: args.mc_seed,
        }),
    };
    let start = Instant::now();
    let result = discretize_mixture(&mixture, &set, &table, &dopts)?;
    let discretization_ms = elapsed_ms(start);
    write_outputs(
        &result,
        None,
        discretization_ms,
        &args.out,
        args.report.as_deref(),
    )
}

pub fn tables_build(max_n: usize, out: &Path) -> Result<(), Failure> {
    if max_n == 0 {
        return Err(Failure {
            kind: "input",
            code: EXIT_INPUT,
            message: "tables build needs --max-n >= 1".to_string(),
        });
    }
    let table = LookupTable1D::new();
    table.prewarm(1..=max_n)?;
    table.save(out)?;
    Ok(())
}

pub fn oracle_w2(
    dist: &Path,
    discrete: &Path,
    samples: usize,
    seed: u64,
) -> Result<(), Failure> {
    let mixture = wire::mixture_from_json(&read(dist)?)?;
    let discrete = wire::discrete_from_json(&read(discrete)?)?;
    let estimate = mc_coupling_cost(&mixture, &discrete, samples, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&estimate).expect("estimate serializes")
    );
    Ok(())
}
