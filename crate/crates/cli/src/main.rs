//! `dilatron`: build universal Poisson dilations of finite-state Markov
//! semigroups, simulate the dilated dynamics, and verify the classical
//! and operator-level identities.
//!
//! Every command reads one matrix file (JSON or CSV), writes one JSON
//! document to stdout (or `--out`), and exits 0 exactly when everything
//! it checked passed. Identical inputs and seeds give byte-identical
//! output; `DILATRON_THREADS` caps the Monte Carlo worker count without
//! changing any result.

mod checks;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dilatron_core::dilation::Dilation;
use dilatron_core::markov::{uniformize, RateMatrix, StochasticMatrix};
use dilatron_core::{io, linalg, tol};

use checks::{quantum_suite, semigroup_run, verify_suite, VerifyOpts};
use report::{to_json, SimulateReport, SuiteReport, Tolerances, SCHEMA};

#[derive(Parser)]
#[command(
    name = "dilatron",
    version,
    about = "Universal Poisson dilations of finite Markov semigroups: build, simulate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct CommonArgs {
    /// Input matrix file.
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatArgs {
    /// RNG seed; fixed seed means byte-identical reports.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Monte Carlo sample paths per statistical check.
    #[arg(long, default_value_t = 20_000)]
    paths: u64,
    /// Chi-square significance level.
    #[arg(long, default_value_t = tol::DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a rate matrix as lambda (P - I) with the smallest usable rate.
    Uniformize {
        #[command(flatten)]
        common: CommonArgs,
        /// Exact-algebra tolerance for the reconstruction residual.
        #[arg(long, default_value_t = tol::EXACT_ALGEBRA)]
        tol_alg: f64,
    },
    /// Write a stochastic matrix as a weighted mixture of deterministic maps.
    Decompose {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = tol::EXACT_ALGEBRA)]
        tol_alg: f64,
    },
    /// Build the universal dilation of a rate matrix and serialize it.
    Dilate {
        #[command(flatten)]
        common: CommonArgs,
        /// Insist on a dense coupling table (fails above the dense limit).
        #[arg(long)]
        dense: bool,
        /// Embed the full coupling table in the output document.
        #[arg(long)]
        with_table: bool,
    },
    /// Monte Carlo transition frequencies against the exact semigroup.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        stat: StatArgs,
        /// Horizons to test, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        times: Vec<f64>,
        /// Initial state (1-based).
        #[arg(long, default_value_t = 1)]
        start: usize,
    },
    /// Run the full verification suite and report per-check results.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        times: Vec<f64>,
        /// Exact-algebra tolerance.
        #[arg(long, default_value_t = tol::EXACT_ALGEBRA)]
        tol_alg: f64,
        /// Semigroup-extension tolerance.
        #[arg(long, default_value_t = tol::EXTENSION)]
        tol_exp: f64,
        /// Inject a broken coupling table (negative control).
        #[arg(long, hide = true)]
        corrupt_coupling: bool,
    },
    /// Run only the operator-level checks.
    QuantumCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.3,1,2")]
        times: Vec<f64>,
        #[arg(long, default_value_t = tol::EXACT_ALGEBRA)]
        tol_alg: f64,
        #[arg(long, default_value_t = tol::EXTENSION)]
        tol_exp: f64,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

/// DILATRON_THREADS caps the rayon pool; unset means rayon's default.
fn configure_threads() {
    if let Ok(raw) = std::env::var("DILATRON_THREADS") {
        if let Ok(k) = raw.trim().parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn read_input(common: &CommonArgs) -> Result<String, AnyError> {
    Ok(std::fs::read_to_string(&common.input)
        .map_err(|e| format!("{}: {e}", common.input.display()))?)
}

fn input_format(common: &CommonArgs) -> Format {
    common.format.unwrap_or_else(|| {
        match common.input.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Json,
        }
    })
}

fn load_rate_matrix(common: &CommonArgs) -> Result<RateMatrix, AnyError> {
    let text = read_input(common)?;
    Ok(match input_format(common) {
        Format::Json => io::rate_matrix_from_json(&text)?,
        Format::Csv => io::rate_matrix_from_csv(&text)?,
    })
}

fn load_stochastic_matrix(common: &CommonArgs) -> Result<StochasticMatrix, AnyError> {
    let text = read_input(common)?;
    Ok(match input_format(common) {
        Format::Json => io::stochastic_matrix_from_json(&text)?,
        Format::Csv => io::stochastic_matrix_from_csv(&text)?,
    })
}

fn emit(common: &CommonArgs, document: &str) -> Result<(), AnyError> {
    match &common.out {
        Some(path) => {
            std::fs::write(path, document).map_err(|e| format!("{}: {e}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{document}"),
    }
    Ok(())
}

fn validate_times(times: &[f64]) -> Result<(), AnyError> {
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(format!("times must be finite and nonnegative, got {t}").into());
        }
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<bool, AnyError> {
    match command {
        Command::Uniformize { common, tol_alg } => cmd_uniformize(common, *tol_alg),
        Command::Decompose { common, tol_alg } => cmd_decompose(common, *tol_alg),
        Command::Dilate { common, dense, with_table } => {
            cmd_dilate(common, *dense, *with_table)
        }
        Command::Simulate { common, stat, times, start } => {
            cmd_simulate(common, stat, times, *start)
        }
        Command::Verify { common, stat, times, tol_alg, tol_exp, corrupt_coupling } => {
            cmd_verify(common, stat, times, *tol_alg, *tol_exp, *corrupt_coupling)
        }
        Command::QuantumCheck { common, seed, times, tol_alg, tol_exp } => {
            cmd_quantum_check(common, *seed, times, *tol_alg, *tol_exp)
        }
    }
}

fn cmd_uniformize(common: &CommonArgs, tol_alg: f64) -> Result<bool, AnyError> {
    let r = load_rate_matrix(common)?;
    let (lambda, p) = uniformize(&r);
    // Reconstruction residual || lambda (P - I) - R ||_max.
    let n = r.n();
    let mut rebuilt = p.as_array().mapv(|x| x * lambda);
    for i in 0..n {
        rebuilt[[i, i]] -= lambda;
    }
    let residual = linalg::max_abs_diff_r(&rebuilt, r.as_array());
    let pass = residual <= tol_alg;

    let document = serde_json::json!({
        "schema": SCHEMA,
        "command": "uniformize",
        "n": n,
        "lambda": lambda,
        "p": serde_json::from_str::<serde_json::Value>(&io::matrix_to_json(p.as_array()))?,
        "residual": residual,
        "tolerance": tol_alg,
        "pass": pass,
    });
    emit(common, &pretty(&document))?;
    Ok(pass)
}

fn cmd_decompose(common: &CommonArgs, tol_alg: f64) -> Result<bool, AnyError> {
    let p = load_stochastic_matrix(common)?;
    let d = dilatron_core::markov::decompose(&p)?;
    let back = dilatron_core::markov::recompose(&d)?;
    let residual = linalg::max_abs_diff_r(back.as_array(), p.as_array());
    let weight_sum: f64 = d.atoms().iter().map(|a| a.weight).sum();
    let pass = residual <= tol_alg && (weight_sum - 1.0).abs() <= tol_alg;

    let atoms: serde_json::Value =
        serde_json::from_str(&io::decomposition_to_json(&d))?;
    let document = serde_json::json!({
        "schema": SCHEMA,
        "command": "decompose",
        "n": p.n(),
        "atom_count": d.atoms().len(),
        "weight_sum": weight_sum,
        "recompose_residual": residual,
        "tolerance": tol_alg,
        "decomposition": atoms,
        "pass": pass,
    });
    emit(common, &pretty(&document))?;
    Ok(pass)
}

fn cmd_dilate(common: &CommonArgs, dense: bool, with_table: bool) -> Result<bool, AnyError> {
    let r = load_rate_matrix(common)?;
    let dilation = if dense || with_table {
        Dilation::build_universal_dense(&r)?
    } else {
        Dilation::build_universal(&r)?
    };
    eprintln!(
        "n = {}, lambda = {}, |supp q| = {}",
        dilation.n(),
        dilation.law().lambda(),
        dilation.law().support().len()
    );
    let mut document = io::dilation_to_json(&dilation, with_table)?;
    document.push('\n');
    emit(common, &document)?;
    Ok(true)
}

fn cmd_simulate(
    common: &CommonArgs,
    stat: &StatArgs,
    times: &[f64],
    start: usize,
) -> Result<bool, AnyError> {
    validate_times(times)?;
    let r = load_rate_matrix(common)?;
    let k = start
        .checked_sub(1)
        .filter(|&k| k < r.n())
        .ok_or_else(|| format!("start state {start} out of range 1..={}", r.n()))?;
    let dilation = Dilation::build_universal(&r)?;
    let mut runs = Vec::with_capacity(times.len());
    for (idx, &t) in times.iter().enumerate() {
        runs.push(semigroup_run(
            &r,
            &dilation,
            k,
            t,
            stat.paths,
            stat.seed.wrapping_add(idx as u64),
            stat.alpha,
        )?);
    }
    let pass = runs.iter().all(|run| run.verdict == "pass");
    let report = SimulateReport {
        schema: SCHEMA,
        command: "simulate",
        n: r.n(),
        seed: stat.seed,
        alpha: stat.alpha,
        runs,
        pass,
    };
    emit(common, &to_json(&report))?;
    Ok(pass)
}

fn cmd_verify(
    common: &CommonArgs,
    stat: &StatArgs,
    times: &[f64],
    tol_alg: f64,
    tol_exp: f64,
    corrupt: bool,
) -> Result<bool, AnyError> {
    validate_times(times)?;
    let r = load_rate_matrix(common)?;
    let opts = VerifyOpts {
        seed: stat.seed,
        paths: stat.paths,
        times: times.to_vec(),
        alpha: stat.alpha,
        tol_alg,
        tol_exp,
        corrupt,
    };
    let checks = verify_suite(&r, &opts);
    let pass = checks.iter().all(|c| c.pass);
    let report = SuiteReport {
        schema: SCHEMA,
        command: "verify",
        n: r.n(),
        seed: Some(stat.seed),
        paths: Some(stat.paths),
        times: times.to_vec(),
        alpha: Some(stat.alpha),
        tolerances: Tolerances { algebra: tol_alg, extension: tol_exp },
        checks,
        pass,
    };
    emit(common, &to_json(&report))?;
    Ok(pass)
}

fn cmd_quantum_check(
    common: &CommonArgs,
    seed: u64,
    times: &[f64],
    tol_alg: f64,
    tol_exp: f64,
) -> Result<bool, AnyError> {
    validate_times(times)?;
    let r = load_rate_matrix(common)?;
    let checks = quantum_suite(&r, times, seed, tol_alg, tol_exp);
    let pass = checks.iter().all(|c| c.pass);
    let report = SuiteReport {
        schema: SCHEMA,
        command: "quantum-check",
        n: r.n(),
        seed: Some(seed),
        paths: None,
        times: times.to_vec(),
        alpha: None,
        tolerances: Tolerances { algebra: tol_alg, extension: tol_exp },
        checks,
        pass,
    };
    emit(common, &to_json(&report))?;
    Ok(pass)
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serializes");
    s.push('\n');
    s
}
