//! Benchmark suites: named quantization cases swept over ascending support
//! sizes, timed around generation and discretization separately, and
//! emitted as CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use gmq_core::wire;
use gmq_core::{
    discretize_mixture, generate_scheme_mixture, DiscretizeOptions, GenerateOptions,
    LookupTable1D, McOptions,
};
use serde::Deserialize;

use crate::commands::{certificate_kind, Configuration, Failure, EXIT_INPUT, EXIT_MATH};
use crate::BenchmarkArgs;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    cases: Vec<CaseFile>,
}

fn default_per_mode() -> bool {
    true
}

fn default_repetitions() -> usize {
    1
}

fn default_configuration() -> Configuration {
    Configuration::Grid
}

/// One benchmark case: a mixture swept over ascending support sizes.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    name: String,
    /// Mixture file, resolved relative to the suite file when relative.
    mixture: PathBuf,
    /// Support sizes, strictly ascending.
    sizes: Vec<usize>,
    #[serde(default = "default_configuration")]
    configuration: Configuration,
    #[serde(default = "default_per_mode")]
    per_mode: bool,
    /// Timing repetitions per size; reported timings are medians.
    #[serde(default = "default_repetitions")]
    repetitions: usize,
    /// Seed for the optional sampling check.
    #[serde(default)]
    seed: u64,
    /// When set, every size also runs a seeded sampling check and the case
    /// fails if the estimate exceeds the certificate beyond 4 sigma.
    #[serde(default)]
    mc_samples: Option<usize>,
    #[serde(default)]
    mode_merge_tol: Option<f64>,
    #[serde(default)]
    homogeneity_tol: Option<f64>,
}

struct Row {
    size: usize,
    w2: Option<f64>,
    kind: &'static str,
    support: usize,
    gen_ms: f64,
    disc_ms: f64,
    total_ms: f64,
}

struct CaseFailure {
    math: bool,
    message: String,
}

impl From<gmq_core::Error> for CaseFailure {
    fn from(e: gmq_core::Error) -> CaseFailure {
        CaseFailure {
            math: !e.is_input_error(),
            message: e.to_string(),
        }
    }
}

fn validate_suite(suite: &SuiteFile) -> Result<(), Failure> {
    let invalid = |message: String| Failure {
        kind: "input",
        code: EXIT_INPUT,
        message,
    };
    if suite.cases.is_empty() {
        return Err(invalid("suite has no cases".to_string()));
    }
    for case in &suite.cases {
        if case.name.is_empty() || case.name.contains(['"', ',', '\n']) {
            return Err(invalid(format!(
                "case name {:?} must be nonempty and free of quotes, commas, and newlines",
                case.name
            )));
        }
        if case.sizes.is_empty() {
            return Err(invalid(format!("case {} has no sizes", case.name)));
        }
        if case.sizes[0] == 0 || !case.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid(format!(
                "case {}: sizes must be positive and strictly ascending",
                case.name
            )));
        }
        if case.repetitions == 0 {
            return Err(invalid(format!(
                "case {}: repetitions must be at least 1",
                case.name
            )));
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    xs[xs.len() / 2]
}

/// Run one case, appending a row per completed size. Returns the failure
/// that stopped the case, if any; rows computed before the failure stay.
fn run_case(
    case: &CaseFile,
    base: &Path,
    table: &LookupTable1D,
    rows: &mut Vec<Row>,
) -> Option<CaseFailure> {
    let path = if case.mixture.is_absolute() {
        case.mixture.clone()
    } else {
        base.join(&case.mixture)
    };
    let mut run = || -> Result<(), CaseFailure> {
        let text = fs::read_to_string(&path).map_err(|e| CaseFailure {
            math: false,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let mixture = wire::mixture_from_json(&text)?;
        let mut opts = GenerateOptions {
            pattern: case.configuration.into(),
            per_mode: case.per_mode,
            ..GenerateOptions::default()
        };
        if case.mode_merge_tol.is_some() {
            opts.mode_merge_tol = case.mode_merge_tol;
        }
        if let Some(tol) = case.homogeneity_tol {
            opts.homogeneity_tol = tol;
        }
        let dopts = DiscretizeOptions {
            mc_check: case.mc_samples.map(|samples| McOptions {
                samples,
                seed: case.seed,
            }),
            ..DiscretizeOptions::default()
        };

        let mut previous: Option<f64> = None;
        for &size in &case.sizes {
            let mut gen_times = Vec::with_capacity(case.repetitions);
            let mut disc_times = Vec::with_capacity(case.repetitions);
            let mut total_times = Vec::with_capacity(case.repetitions);
            let mut last = None;
            for _ in 0..case.repetitions {
                let start = Instant::now();
                let set = generate_scheme_mixture(&mixture, size, &opts, table)?;
                let gen_ms = start.elapsed().as_secs_f64() * 1e3;
                let start = Instant::now();
                let result = discretize_mixture(&mixture, &set, table, &dopts)?;
                let disc_ms = start.elapsed().as_secs_f64() * 1e3;
                gen_times.push(gen_ms);
                disc_times.push(disc_ms);
                total_times.push(gen_ms + disc_ms);
                last = Some(result);
            }
            let result = last.expect("repetitions >= 1");
            let w2 = result.certificate.value();
            if let (Some(est), Some(value)) = (result.mc_check, w2) {
                if est.value > value + 4.0 * est.std_error {
                    return Err(CaseFailure {
                        math: true,
                        message: format!(
                            "size {size}: sampled coupling {} exceeds the certificate \
                             {value} beyond 4 sigma",
                            est.value
                        ),
                    });
                }
            }
            rows.push(Row {
                size,
                w2,
                kind: certificate_kind(&result.certificate),
                support: result.discrete.len(),
                gen_ms: median(gen_times),
                disc_ms: median(disc_times),
                total_ms: median(total_times),
            });
            let Some(value) = w2 else {
                return Err(CaseFailure {
                    math: true,
                    message: format!("size {size}: no certificate"),
                });
            };
            if let Some(prev) = previous {
                if value >= prev {
                    return Err(CaseFailure {
                        math: true,
                        message: format!(
                            "certified error stopped decreasing: {prev} then {value} at \
                             size {size}"
                        ),
                    });
                }
            }
            previous = Some(value);
        }
        Ok(())
    };
    run().err()
}

pub fn run_benchmark(args: &BenchmarkArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.suite).map_err(|e| Failure {
        kind: "io",
        code: EXIT_INPUT,
        message: format!("cannot read {}: {e}", args.suite.display()),
    })?;
    let suite: SuiteFile = serde_json::from_str(&text).map_err(|e| Failure {
        kind: "parse",
        code: EXIT_INPUT,
        message: format!("suite {}: {e}", args.suite.display()),
    })?;
    validate_suite(&suite)?;
    let base = args
        .suite
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let table = args.table.load()?;

    let mut outcomes: Vec<(Vec<Row>, Option<CaseFailure>)> =
        Vec::with_capacity(suite.cases.len());
    if args.parallel {
        thread::scope(|scope| {
            let handles: Vec<_> = suite
                .cases
                .iter()
                .map(|case| {
                    let (base, table) = (&base, &table);
                    scope.spawn(move || {
                        let mut rows = Vec::new();
                        let failure = run_case(case, base, table, &mut rows);
                        (rows, failure)
                    })
                })
                .collect();
            for handle in handles {
                outcomes.push(handle.join().expect("benchmark case thread"));
            }
        });
    } else {
        for case in &suite.cases {
            let mut rows = Vec::new();
            let failure = run_case(case, &base, &table, &mut rows);
            outcomes.push((rows, failure));
        }
    }

    let mut csv = String::new();
    if args.parallel {
        csv.push_str("# cases ran concurrently: timing columns are not comparable\n");
    }
    csv.push_str("case,name,size,w2,w2_kind,support,gen_ms,disc_ms,total_ms\n");
    for (index, ((rows, _), case)) in outcomes.iter().zip(&suite.cases).enumerate() {
        for row in rows {
            let w2 = row.w2.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{index},{},{},{w2},{},{},{:.3},{:.3},{:.3}\n",
                case.name, row.size, row.kind, row.support, row.gen_ms, row.disc_ms, row.total_ms
            ));
        }
    }
    match &args.out {
        Some(path) => fs::write(path, &csv).map_err(|e| Failure {
            kind: "io",
            code: EXIT_INPUT,
            message: format!("cannot write {}: {e}", path.display()),
        })?,
        None => print!("{csv}"),
    }

    let failures: Vec<(&str, &CaseFailure)> = outcomes
        .iter()
        .zip(&suite.cases)
        .filter_map(|((_, failure), case)| {
            failure.as_ref().map(|f| (case.name.as_str(), f))
        })
        .collect();
    if failures.is_empty() {
        return Ok(());
    }
    for (name, failure) in &failures {
        eprintln!(
            "{}",
            serde_json::json!({"error": "case", "case": name, "message": failure.message})
        );
    }
    Err(Failure {
        kind: "benchmark",
        code: if failures.iter().any(|(_, f)| f.math) {
            EXIT_MATH
        } else {
            EXIT_INPUT
        },
        message: format!("{} of {} cases failed", failures.len(), suite.cases.len()),
    })
}
