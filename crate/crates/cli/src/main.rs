use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bifset::analysis::{self, to_json, AnalysisConfig, AnalysisReport, Bound};
use bifset::asymptotic::{s_infinity, RadiusLadder};
use bifset::critical::sigma_values;
use bifset::expr::{DerivativeTable, Expression, Mode};
use bifset::fibration::{fiber_components, write_trajectories_csv, Verdict, VerifyConfig, VerifyReport};
use bifset::value::{Value, ValueCluster, ValueTolerance};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const EXIT_OK: u8 = 0;
const EXIT_IO: u8 = 1;
const EXIT_DEGENERATE: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_REFUSED: u8 = 4;
const EXIT_FAILED: u8 = 5;

/// Candidate bifurcation values of real and complex functions.
#[derive(Parser)]
#[command(name = "bifset", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Critical values, asymptotic values, bounds and candidates as JSON.
    Analyze(Common),
    /// Analyze, then transport fibers across [A, B].
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(allow_negative_numbers = true)]
        a: f64,
        #[arg(allow_negative_numbers = true)]
        b: f64,
        /// Fiber samples transported from the midpoint level.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Number of connected components of the level set f = LEVEL in a box.
    FiberComponents {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        level: f64,
    },
    /// Branch traces of the tangency variety as CSV.
    BranchesCsv(Common),
    /// Critical values only.
    Sigma(Common),
    /// Asymptotic values only.
    Sinf(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Function, e.g. "x^2*y^2 + 2*x*y".
    #[arg(long = "expr")]
    expression: String,
    /// Comma-separated variable names in coordinate order.
    #[arg(long, value_delimiter = ',', required = true)]
    vars: Vec<String>,
    /// Read the function as a complex polynomial.
    #[arg(long)]
    complex: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Multistart points per solve.
    #[arg(long, default_value_t = 200)]
    starts: usize,
    #[arg(long, default_value_t = 5.0)]
    r0: f64,
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long, default_value_t = 10)]
    rungs: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol_residual: f64,
    #[arg(long, default_value_t = 1e-7)]
    tol_tau: f64,
    /// Absolute value tolerance; the relative part stays 1e-6.
    #[arg(long, default_value_t = 1e-5)]
    tol_value: f64,
    /// Half-width of the search box (critical points, fiber grids).
    #[arg(long = "box", default_value_t = 20.0)]
    half_width: f64,
    /// Grid cells per axis [default: 512, or 1024 for fiber components].
    #[arg(long)]
    grid: Option<usize>,
    /// Write the JSON output here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write CSV output (branch traces, transport trajectories) here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Accept sin and cos. The value sets need not be finite then.
    #[arg(long)]
    unsafe_nondefinable: bool,
    /// Record wall-clock timings in the report.
    #[arg(long)]
    timings: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

impl Common {
    fn config(&self, default_grid: usize) -> Result<AnalysisConfig, Failure> {
        let ladder = RadiusLadder::new(self.r0, self.rho, self.rungs).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
        let positive = [
            ("--tol-residual", self.tol_residual),
            ("--tol-tau", self.tol_tau),
            ("--tol-value", self.tol_value),
            ("--box", self.half_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::new(EXIT_USAGE, format!("{name} must be positive, got {v}")));
            }
        }
        if self.starts == 0 {
            return Err(Failure::new(EXIT_USAGE, "--starts must be at least 1"));
        }
        Ok(AnalysisConfig {
            mode: if self.complex { Mode::Complex } else { Mode::Real },
            seed: self.seed,
            starts: self.starts,
            ladder,
            tol_residual: self.tol_residual,
            tol_tau: self.tol_tau,
            tol_value: ValueTolerance {
                abs: self.tol_value,
                ..ValueTolerance::default()
            },
            box_half_width: self.half_width,
            grid: self.grid.unwrap_or(default_grid),
            allow_nondefinable: self.unsafe_nondefinable,
            record_timings: self.timings,
            ..AnalysisConfig::default()
        })
    }

    fn parse(&self, config: &AnalysisConfig) -> Result<Expression, Failure> {
        let vars: Vec<&str> = self.vars.iter().map(|v| v.trim()).collect();
        analysis::parse_input(&self.expression, &vars, config).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))
    }

    fn setup(&self, default_grid: usize) -> Result<(AnalysisConfig, Expression), Failure> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot set up {n} threads: {e}")))?;
        }
        let config = self.config(default_grid)?;
        let expr = self.parse(&config)?;
        Ok((config, expr))
    }

    fn emit<T: Serialize>(&self, value: &T) -> Result<(), Failure> {
        let text = to_json(value).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
        match &self.json {
            Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
            None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::new(EXIT_IO, e.to_string())),
        }
    }
}

fn io_failure(path: &std::path::Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn values(clusters: &[ValueCluster]) -> String {
    let v: Vec<String> = clusters.iter().map(|c| c.value.to_string()).collect();
    format!("[{}]", v.join(", "))
}

fn summarize(report: &AnalysisReport) {
    let bound = |b: Bound| match b {
        Bound::Count(c) => c.to_string(),
        Bound::Unknown => "unknown".to_string(),
    };
    eprintln!("sigma:      {}", values(&report.sigma));
    eprintln!("s_infinity: {}", values(&report.s_infinity));
    eprintln!("candidates: {}", values(&report.candidates));
    eprintln!(
        "bounds:     sigma <= {}, s_infinity <= {}",
        bound(report.bounds.sigma_upper),
        bound(report.bounds.s_upper)
    );
    for note in &report.diagnostics.notes {
        eprintln!("note: {note}");
    }
}

fn analyze(common: &Common) -> Outcome {
    let (config, expr) = common.setup(512)?;
    let report = analysis::analyze(&expr, &config);
    summarize(&report);
    common.emit(&report)?;
    Ok(if report.flags.degenerate_slice { EXIT_DEGENERATE } else { EXIT_OK })
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    schema: u32,
    candidates: Vec<Value>,
    verify: &'a VerifyReport,
}

fn verify(common: &Common, a: f64, b: f64, samples: usize) -> Outcome {
    if !(a.is_finite() && b.is_finite()) || a == b {
        return Err(Failure::new(EXIT_USAGE, format!("interval [{a}, {b}] must have distinct finite ends")));
    }
    let (config, expr) = common.setup(512)?;
    let vcfg = VerifyConfig {
        samples,
        seed: config.seed,
        tol_value: config.tol_value,
        fiber_box: config.box_half_width,
        fiber_grid: common.grid.unwrap_or(VerifyConfig::default().fiber_grid),
        ..VerifyConfig::default()
    };
    let (report, verdict) = analysis::verify(&expr, a, b, &config, &vcfg).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    eprintln!("candidates: {}", values(&report.candidates));
    eprintln!("verdict:    {:?} (max level error {:e})", verdict.verdict, verdict.max_level_error);
    for note in &verdict.notes {
        eprintln!("note: {note}");
    }
    if let Some(path) = &common.csv {
        let file = File::create(path).map_err(|e| io_failure(path, e))?;
        write_trajectories_csv(&verdict.transports, expr.variables(), BufWriter::new(file)).map_err(|e| io_failure(path, e))?;
    }
    common.emit(&VerifyOutput {
        schema: analysis::SCHEMA,
        candidates: report.candidate_values(),
        verify: &verdict,
    })?;
    Ok(match verdict.verdict {
        Verdict::Success => EXIT_OK,
        Verdict::Refused => EXIT_REFUSED,
        Verdict::FieldSingular | Verdict::IntegrationFailure | Verdict::Falsified => EXIT_FAILED,
    })
}

fn fiber(common: &Common, level: f64) -> Outcome {
    let (config, expr) = common.setup(1024)?;
    let table = DerivativeTable::new(&expr);
    let n = fiber_components(&table, level, config.box_half_width, config.grid).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    println!("{n}");
    Ok(EXIT_OK)
}

fn branches_csv(common: &Common) -> Outcome {
    let (config, expr) = common.setup(512)?;
    let rows = match &common.csv {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_failure(path, e))?;
            analysis::write_branches_csv(&expr, &config, BufWriter::new(file)).map_err(|e| io_failure(path, e))?
        }
        None => analysis::write_branches_csv(&expr, &config, io::stdout().lock()).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?,
    };
    eprintln!("{rows} branch samples written");
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Partial<'a> {
    schema: u32,
    expression: String,
    values: &'a [ValueCluster],
    #[serde(skip_serializing_if = "Option::is_none")]
    instability: Option<bool>,
}

fn sigma(common: &Common) -> Outcome {
    let (config, expr) = common.setup(512)?;
    let result = sigma_values(&DerivativeTable::new(&expr), &config.critical());
    eprintln!("sigma: {}", values(&result.clusters));
    common.emit(&Partial {
        schema: analysis::SCHEMA,
        expression: expr.to_string(),
        values: &result.clusters,
        instability: None,
    })?;
    Ok(EXIT_OK)
}

fn sinf(common: &Common) -> Outcome {
    let (config, expr) = common.setup(512)?;
    let result = s_infinity(&DerivativeTable::new(&expr), &config.asymptotic());
    eprintln!("s_infinity: {}", values(&result.clusters));
    common.emit(&Partial {
        schema: analysis::SCHEMA,
        expression: expr.to_string(),
        values: &result.clusters,
        instability: Some(result.instability),
    })?;
    Ok(if result.trace.is_degenerate() { EXIT_DEGENERATE } else { EXIT_OK })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Analyze(c) => analyze(c),
        Command::Verify { common, a, b, samples } => verify(common, *a, *b, *samples),
        Command::FiberComponents { common, level } => fiber(common, *level),
        Command::BranchesCsv(c) => branches_csv(c),
        Command::Sigma(c) => sigma(c),
        Command::Sinf(c) => sinf(c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
