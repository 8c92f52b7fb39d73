//! `ito-reorder`: verify catalogued identities, sweep step counts, run the
//! covariance experiment and list the catalog.
//!
//! Exit codes: 0 pass, 1 statistical failure, 2 usage or configuration error.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ito_reorder::catalog::{export, filter};
use ito_reorder::domain::{Interval, KernelExpr, WeightExpr};
use ito_reorder::mc::{check_identity, convergence_sweep, covariance_experiment, EnvelopePolicy, MIN_PATHS, MIN_STEPS};
use ito_reorder::report::{verify_csv_row, CovarianceDocument, RunConfig, SweepDocument, VerifyDocument, VERIFY_CSV_HEADER};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "ito-reorder", version, about = "Monte Carlo checks of order-replacement identities for iterated Ito integrals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check identities against the calibrated envelope.
    Verify(VerifyArgs),
    /// Mean-square error over several step counts with a log-log slope.
    Sweep(SweepArgs),
    /// Compare the sample mean of I*J with its double-integral value.
    Covariance(CovarianceArgs),
    /// List catalog entries.
    Catalog(CatalogArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Interval start t.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Interval end T.
    #[arg(long, default_value_t = 1.0)]
    end: f64,
    /// Number of sampled paths M.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Glob over identity ids.
    #[arg(long, default_value = "*")]
    identity: String,
    /// Verification steps N.
    #[arg(long, default_value_t = 1024)]
    steps: usize,
    /// Multiplier of the C/N envelope; jump drivers use twice this.
    #[arg(long, default_value_t = EnvelopePolicy::default().factor)]
    envelope_factor: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    identity: String,
    /// Comma-separated step counts, at least three distinct.
    #[arg(long, value_delimiter = ',', required = true)]
    steps: Vec<usize>,
    #[command(flatten)]
    common: Common,
}

/// Bivariate kernels by name, as functions of their arguments `(a, b)`.
#[derive(Clone, Copy, ValueEnum)]
enum NamedKernel {
    /// 1
    One,
    /// a
    First,
    /// b
    Second,
    /// a - b
    Diff,
}

impl NamedKernel {
    fn build(self, iv: Interval) -> KernelExpr {
        // Absolute time s = (s - t) + t.
        let time = WeightExpr::sum(vec![(1.0, WeightExpr::since_start(1.0)), (iv.start, WeightExpr::one())]);
        match self {
            NamedKernel::One => KernelExpr::constant(1.0),
            NamedKernel::First => KernelExpr::separable(vec![time, WeightExpr::one()]),
            NamedKernel::Second => KernelExpr::separable(vec![WeightExpr::one(), time]),
            NamedKernel::Diff => KernelExpr::sum(vec![
                (1.0, KernelExpr::separable(vec![time.clone(), WeightExpr::one()])),
                (-1.0, KernelExpr::separable(vec![WeightExpr::one(), time])),
            ]),
        }
    }
}

#[derive(Args)]
struct CovarianceArgs {
    #[arg(long, value_enum, default_value_t = NamedKernel::One)]
    phi1: NamedKernel,
    #[arg(long, value_enum, default_value_t = NamedKernel::One)]
    phi2: NamedKernel,
    /// Wiener component of the inner layer of J, numbered from 1.
    #[arg(long, default_value_t = 1)]
    i1: usize,
    /// Wiener component of the outer layer of J, numbered from 1.
    #[arg(long, default_value_t = 1)]
    i2: usize,
    #[arg(long, default_value_t = 512)]
    steps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CatalogArgs {
    /// Glob over identity ids.
    #[arg(long, default_value = "*")]
    filter: String,
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    #[arg(long, default_value_t = 1.0)]
    end: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure { code: EXIT_USAGE, message: message.to_string() }
}

type CliResult = Result<u8, Failure>;

fn interval(start: f64, end: f64) -> Result<Interval, Failure> {
    Interval::new(start, end).map_err(usage)
}

fn check_sizes(steps: &[usize], paths: usize) -> Result<(), Failure> {
    if let Some(n) = steps.iter().find(|&&n| n < MIN_STEPS) {
        return Err(usage(format!("steps must be at least {MIN_STEPS}, got {n}")));
    }
    if paths < MIN_PATHS {
        return Err(usage(format!("paths must be at least {MIN_PATHS}, got {paths}")));
    }
    Ok(())
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    let result = match output {
        Some(path) => File::create(path).and_then(|mut f| f.write_all(text.as_bytes())),
        None => io::stdout().write_all(text.as_bytes()),
    };
    result.map_err(|e| usage(format!("cannot write report: {e}")))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(usage)?;
    for row in rows {
        w.write_record(&row).map_err(usage)?;
    }
    let bytes = w.into_inner().map_err(usage)?;
    String::from_utf8(bytes).map_err(usage)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(usage("threads must be positive")),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(usage)?.install(f)),
    }
}

fn config(command: &str, identity: &str, iv: Interval, steps: Vec<usize>, c: &Common) -> RunConfig {
    RunConfig {
        command: command.into(),
        identity: identity.into(),
        t: iv.start,
        end: iv.end,
        steps,
        paths: c.paths,
        seed: c.seed,
    }
}

fn cmd_verify(a: &VerifyArgs) -> CliResult {
    let c = &a.common;
    let iv = interval(c.start, c.end)?;
    check_sizes(&[a.steps], c.paths)?;
    if !(a.envelope_factor.is_finite() && a.envelope_factor > 0.0) {
        return Err(usage("envelope factor must be positive"));
    }
    let ids = filter(&a.identity, iv).map_err(usage)?;
    let policy = EnvelopePolicy { factor: a.envelope_factor, jump_factor: 2.0 * a.envelope_factor, ..EnvelopePolicy::default() };
    let verdicts = with_threads(c.threads, || {
        ids.iter().map(|id| check_identity(id, a.steps, c.paths, c.seed, &policy)).collect::<Result<Vec<_>, _>>()
    })?
    .map_err(usage)?;
    let text = match c.format {
        Format::Json => VerifyDocument::new(config("verify", &a.identity, iv, vec![a.steps], c), verdicts.clone()).to_json() + "\n",
        Format::Csv => csv_text(&VERIFY_CSV_HEADER, verdicts.iter().map(|v| verify_csv_row(v).to_vec()))?,
        Format::Table => {
            let mut s = format!("{:<24} {:>6} {:>7} {:>12} {:>12} {:>12}  result\n", "id", "N", "M", "ms_error", "envelope", "scale_bound");
            for v in &verdicts {
                let r = &v.report;
                s += &format!(
                    "{:<24} {:>6} {:>7} {:>12.4e} {:>12.4e} {:>12.4e}  {}\n",
                    r.identity_id,
                    r.steps,
                    r.paths,
                    r.ms_error,
                    v.envelope,
                    v.scale_bound,
                    if v.pass { "pass" } else { "FAIL" }
                );
            }
            s
        }
    };
    emit(&c.output, &text)?;
    let failed: Vec<_> = verdicts.iter().filter(|v| !v.pass).collect();
    for v in &failed {
        eprintln!(
            "failed: {} ms_error {:.4e} above min(envelope {:.4e}, scale bound {:.4e})",
            v.report.identity_id, v.report.ms_error, v.envelope, v.scale_bound
        );
    }
    Ok(if failed.is_empty() { 0 } else { EXIT_FAIL })
}

fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let c = &a.common;
    let iv = interval(c.start, c.end)?;
    check_sizes(&a.steps, c.paths)?;
    let ids = filter(&a.identity, iv).map_err(usage)?;
    let reports = with_threads(c.threads, || {
        ids.iter().map(|id| convergence_sweep(id, &a.steps, c.paths, c.seed)).collect::<Result<Vec<_>, _>>()
    })?
    .map_err(usage)?;
    let text = match c.format {
        Format::Json => SweepDocument::new(config("sweep", &a.identity, iv, a.steps.clone(), c), reports).to_json() + "\n",
        Format::Csv => {
            let header = ["identity_id", "citation", "N", "M", "seed", "ms_error", "ci95_lo", "ci95_hi", "slope"];
            let rows = reports.iter().flat_map(|r| {
                r.rows.iter().map(move |row| {
                    vec![
                        r.identity_id.clone(),
                        r.citation.clone(),
                        row.steps.to_string(),
                        r.paths.to_string(),
                        row.seed.to_string(),
                        row.ms_error.to_string(),
                        row.ci95[0].to_string(),
                        row.ci95[1].to_string(),
                        r.slope.map_or(String::new(), |s| s.to_string()),
                    ]
                })
            });
            csv_text(&header, rows)?
        }
        Format::Table => {
            let mut s = String::new();
            for r in &reports {
                let slope = r.slope.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                s += &format!("{} slope {slope}\n", r.identity_id);
                for row in &r.rows {
                    s += &format!("  N {:>7}  ms_error {:.4e}\n", row.steps, row.ms_error);
                }
            }
            s
        }
    };
    emit(&c.output, &text)?;
    Ok(0)
}

fn cmd_covariance(a: &CovarianceArgs) -> CliResult {
    let c = &a.common;
    let iv = interval(c.start, c.end)?;
    check_sizes(&[a.steps], c.paths)?;
    let (phi1, phi2) = (a.phi1.build(iv), a.phi2.build(iv));
    let report = with_threads(c.threads, || covariance_experiment(&phi1, &phi2, a.i1, a.i2, a.steps, c.paths, c.seed, iv))?
        .map_err(usage)?;
    let pass = report.pass;
    let label = format!("phi1={phi1} phi2={phi2} i1={} i2={}", a.i1, a.i2);
    let text = match c.format {
        Format::Json => CovarianceDocument::new(config("covariance", &label, iv, vec![a.steps], c), vec![report.clone()]).to_json() + "\n",
        Format::Csv => {
            let header = ["phi1", "phi2", "i1", "i2", "N", "M", "seed", "estimate", "std_error", "target", "quadrature", "z_score", "pass"];
            let r = &report;
            csv_text(
                &header,
                [vec![
                    r.phi1.clone(),
                    r.phi2.clone(),
                    r.i1.to_string(),
                    r.i2.to_string(),
                    r.steps.to_string(),
                    r.paths.to_string(),
                    r.seed.to_string(),
                    r.estimate.to_string(),
                    r.std_error.to_string(),
                    r.target.to_string(),
                    r.quadrature.to_string(),
                    r.z_score.to_string(),
                    r.pass.to_string(),
                ]],
            )?
        }
        Format::Table => format!(
            "{label}\nestimate {:.6} +- {:.6}  target {:.6}  z {:.3}  {}\n",
            report.estimate,
            report.std_error,
            report.target,
            report.z_score,
            if pass { "pass" } else { "FAIL" }
        ),
    };
    emit(&c.output, &text)?;
    if !pass {
        eprintln!("failed: |z| = {:.3} exceeds 4", report.z_score.abs());
    }
    Ok(if pass { 0 } else { EXIT_FAIL })
}

fn cmd_catalog(a: &CatalogArgs) -> CliResult {
    let iv = interval(a.start, a.end)?;
    let ids = filter(&a.filter, iv).map_err(usage)?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&export(&ids)).map_err(usage)? + "\n",
        Format::Csv => csv_text(
            &["id", "citation", "k", "drivers"],
            ids.iter().map(|i| {
                let drivers: Vec<String> = i.drivers().iter().map(ToString::to_string).collect();
                vec![i.id().to_string(), i.citation().to_string(), i.multiplicity().to_string(), drivers.join("+")]
            }),
        )?,
        Format::Table => {
            let mut s = String::new();
            for i in &ids {
                s += &format!("{:<24} {:<44} {}\n", i.id(), i.citation(), i.structure());
            }
            s
        }
    };
    emit(&a.output, &text)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Covariance(a) => cmd_covariance(a),
        Command::Catalog(a) => cmd_catalog(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
