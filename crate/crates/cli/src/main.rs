use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qpflow_core::dcpf::{self, DcSystem};
use qpflow_core::harness::{
    self, qubit_budget, reproduce_paper, run_sweep, write_sweep_csv, write_sweep_json, Algorithm, PointStatus,
    ReproduceOptions, SweepSpec,
};
use qpflow_core::hhl::{solve_hhl, HhlConfig};
use qpflow_core::hybrid::{solve_hybrid, HybridConfig, DEFAULT_SIGN_TOLERANCE};
use qpflow_core::qpe::{success_surface, write_surface_csv};
use qpflow_core::{classical_reference, scale_system, Engine, Mode, DEFAULT_SHOTS};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;
const EXIT_CAP_SKIP: u8 = 4;

#[derive(Parser)]
#[command(name = "qpflow", version, about = "DC power flow with HHL and hybrid phase-estimation solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// LU solution of the reduced DC power flow system.
    SolveClassical(SolveArgs),
    /// HHL with imperfect phase estimation.
    SolveHhl(HhlArgs),
    /// Multi-module hybrid phase estimation.
    SolveHmpea(HmpeaArgs),
    /// Single-module hybrid phase estimation.
    SolveHspea(HspeaArgs),
    /// Error curves over a precision grid.
    Sweep(SweepArgs),
    /// Qubit counts for a configuration.
    Budget(BudgetArgs),
    /// Multi-module success bound over (n_accur, n_redund).
    SuccessSurface(SurfaceArgs),
    /// Run the acceptance experiments and report pass/fail per item.
    ReproducePaper(ReproduceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Sampled,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Sampled => Mode::Sampled,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    FastPath,
    Circuit,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::FastPath => Engine::FastPath,
            EngineArg::Circuit => Engine::Circuit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Hhl,
    Hspea,
    Hmpea,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Hhl => Algorithm::Hhl,
            AlgorithmArg::Hspea => Algorithm::Hspea,
            AlgorithmArg::Hmpea => Algorithm::Hmpea,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Grid description (TOML with [[buses]] and [[branches]]).
    #[arg(long, conflicts_with = "matrix")]
    grid: Option<PathBuf>,
    /// Whitespace-separated B rows followed by the P row.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_SHOTS)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "fast-path")]
    engine: EngineArg,
}

#[derive(Args)]
struct HhlArgs {
    #[command(flatten)]
    input: SolveArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 9)]
    n_accur: usize,
    #[arg(long, default_value_t = 7)]
    n_redund: usize,
    /// Rotation constant C (defaults to 2^-n_accur).
    #[arg(long)]
    rotation_constant: Option<f64>,
}

#[derive(Args)]
struct HmpeaArgs {
    #[command(flatten)]
    input: SolveArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 9)]
    m_prec: usize,
    #[arg(long, default_value_t = 1)]
    n_accur: usize,
    #[arg(long, default_value_t = 7)]
    n_redund: usize,
    #[arg(long, default_value_t = DEFAULT_SIGN_TOLERANCE)]
    sign_tolerance: f64,
}

#[derive(Args)]
struct HspeaArgs {
    #[command(flatten)]
    input: SolveArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 9)]
    n_accur: usize,
    #[arg(long, default_value_t = 7)]
    n_redund: usize,
    #[arg(long, default_value_t = DEFAULT_SIGN_TOLERANCE)]
    sign_tolerance: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: SolveArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// First precision (n_accur for hhl/hspea, m_prec for hmpea).
    #[arg(long, default_value_t = 5)]
    from: usize,
    #[arg(long, default_value_t = 16)]
    to: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [7usize, 9])]
    n_redund: Vec<usize>,
    /// Bits per module for hmpea.
    #[arg(long, default_value_t = 1)]
    n_accur: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 4 if any grid point was skipped for exceeding the qubit ceiling.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Precision in bits.
    #[arg(long)]
    precision: usize,
    #[arg(long, default_value_t = 7)]
    n_redund: usize,
    #[arg(long, default_value_t = 1)]
    n_accur: usize,
    #[arg(long, default_value_t = 2)]
    n_bottom: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long, default_value_t = 9)]
    m_prec: usize,
    #[arg(long, default_value_t = 1)]
    accur_min: usize,
    #[arg(long, default_value_t = 9)]
    accur_max: usize,
    #[arg(long, default_value_t = 2)]
    redund_min: usize,
    #[arg(long, default_value_t = 12)]
    redund_max: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, conflicts_with = "matrix")]
    grid: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Seeds for the sampled items.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_SHOTS)]
    shots: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn load_system(grid: &Option<PathBuf>, matrix: &Option<PathBuf>) -> Result<DcSystem, Failure> {
    let read = |p: &PathBuf| fs::read_to_string(p).map_err(|e| Failure::validation(format!("{}: {e}", p.display())));
    match (grid, matrix) {
        (Some(g), _) => dcpf::load_grid(&read(g)?)
            .and_then(|m| dcpf::build_b_matrix(&m))
            .map_err(|e| Failure::validation(format!("{}: {e}", g.display()))),
        (None, Some(m)) => {
            dcpf::load_matrix_fixture(&read(m)?).map_err(|e| Failure::validation(format!("{}: {e}", m.display())))
        }
        (None, None) => Ok(dcpf::five_bus_system()),
    }
}

fn sink(output: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match output {
        Some(p) => fs::File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::runtime(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn emit_json<T: Serialize>(value: &T, output: &Option<PathBuf>) -> Result<(), Failure> {
    let mut out = sink(output)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(Failure::runtime)?;
    writeln!(out).map_err(Failure::runtime)
}

/// Per-component table: `component,<column>...`.
fn emit_table(columns: &[&str], rows: &[Vec<f64>], output: &Option<PathBuf>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(sink(output)?);
    let mut header = vec!["component"];
    header.extend_from_slice(columns);
    w.write_record(&header).map_err(Failure::runtime)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(Failure::runtime)?;
    }
    w.flush().map_err(Failure::runtime)
}

fn transpose(cols: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = cols.first().map_or(0, |c| c.len());
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn solve_classical(args: SolveArgs) -> Outcome {
    let system = load_system(&args.grid, &args.matrix)?;
    let sol = classical_reference(&system).map_err(Failure::validation)?;
    match args.format {
        Format::Json => emit_json(&sol, &args.output)?,
        Format::Csv => emit_table(&["theta", "normalized"], &transpose(&[&sol.theta, &sol.normalized]), &args.output)?,
    }
    Ok(0)
}

fn solve_hhl_cmd(args: HhlArgs) -> Outcome {
    let system = load_system(&args.input.grid, &args.input.matrix)?;
    let sys = scale_system(&system).map_err(Failure::validation)?;
    let cfg = HhlConfig {
        n_accur: args.n_accur,
        n_redund: args.n_redund,
        mode: args.run.mode.into(),
        shots: args.run.shots,
        seed: args.run.seed,
        engine: args.run.engine.into(),
        rotation_constant: args.rotation_constant,
    };
    let r = solve_hhl(&sys, &cfg).map_err(Failure::validation)?;
    match args.input.format {
        Format::Json => emit_json(&r, &args.input.output)?,
        Format::Csv => {
            let reference = qpflow_core::linalg::normalized(&sys.spectrum.spectral_solve());
            emit_table(
                &["normalized_solution", "reference"],
                &transpose(&[&r.normalized_solution, &reference]),
                &args.input.output,
            )?
        }
    }
    Ok(0)
}

fn run_hybrid(input: &SolveArgs, cfg: HybridConfig) -> Outcome {
    let system = load_system(&input.grid, &input.matrix)?;
    let sys = scale_system(&system).map_err(Failure::validation)?;
    let sol = solve_hybrid(&sys, &cfg).map_err(Failure::validation)?;
    match input.format {
        Format::Json => emit_json(&sol, &input.output)?,
        Format::Csv => emit_table(
            &["theta", "theta_theory", "reference"],
            &transpose(&[&sol.theta, &sol.theta_theory, &sol.reference]),
            &input.output,
        )?,
    }
    Ok(0)
}

fn hybrid_config(m_prec: usize, n_accur: usize, n_redund: usize, run: &RunArgs, tol: f64) -> HybridConfig {
    HybridConfig {
        m_prec,
        n_accur,
        n_redund,
        mode: run.mode.into(),
        shots: run.shots,
        seed: run.seed,
        engine: run.engine.into(),
        sign_tolerance: tol,
    }
}

fn sweep(args: SweepArgs) -> Outcome {
    let system = load_system(&args.input.grid, &args.input.matrix)?;
    let sys = scale_system(&system).map_err(Failure::validation)?;
    if args.n_redund.iter().any(|&r| r < 2) {
        return Err(Failure::validation("every n_redund must be at least 2"));
    }
    let spec = SweepSpec {
        algorithm: args.algorithm.into(),
        precision: args.from..=args.to,
        n_redund: args.n_redund.clone(),
        n_accur: args.n_accur,
        mode: args.run.mode.into(),
        shots: args.run.shots,
        seed: args.run.seed,
        engine: args.run.engine.into(),
    };
    let records = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(Failure::runtime)?
            .install(|| run_sweep(&sys, &spec)),
        None => run_sweep(&sys, &spec),
    };
    let mut out = sink(&args.input.output)?;
    match args.input.format {
        Format::Csv => write_sweep_csv(&records, &mut out).map_err(Failure::runtime)?,
        Format::Json => {
            write_sweep_json(&records, &mut out).map_err(Failure::runtime)?;
            writeln!(out).map_err(Failure::runtime)?;
        }
    }
    out.flush().map_err(Failure::runtime)?;
    for r in records.iter().filter(|r| r.status != PointStatus::Ok) {
        eprintln!(
            "{} m_prec={} n_redund={}: {:?}: {}",
            r.algorithm,
            r.m_prec,
            r.n_redund,
            r.status,
            r.error.as_deref().unwrap_or("")
        );
    }
    let skipped = records.iter().any(|r| r.status == PointStatus::Skipped);
    Ok(if args.strict && skipped { EXIT_CAP_SKIP } else { 0 })
}

fn budget(args: BudgetArgs) -> Outcome {
    let b = qubit_budget(args.algorithm.into(), args.precision, args.n_redund, args.n_accur, args.n_bottom);
    match args.format {
        Format::Json => emit_json(&b, &None)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(["algorithm", "precision_bits", "n_accur", "n_redund", "n_bottom", "total", "medium", "over_ceiling"])
                .map_err(Failure::runtime)?;
            w.write_record([
                b.algorithm.to_string(),
                b.precision_bits.to_string(),
                b.n_accur.to_string(),
                b.n_redund.to_string(),
                b.n_bottom.to_string(),
                b.total.to_string(),
                b.medium.to_string(),
                b.over_ceiling.to_string(),
            ])
            .map_err(Failure::runtime)?;
            w.flush().map_err(Failure::runtime)?;
        }
    }
    if let Some(note) = &b.note {
        eprintln!("note: {note}");
    }
    if b.over_ceiling {
        eprintln!("{} qubits exceed the {}-qubit ceiling", b.total, harness::QUBIT_CEILING);
    }
    Ok(if args.strict && b.over_ceiling { EXIT_CAP_SKIP } else { 0 })
}

fn surface(args: SurfaceArgs) -> Outcome {
    let cells = success_surface(
        args.m_prec,
        args.accur_min..=args.accur_max,
        args.redund_min..=args.redund_max,
    )
    .map_err(Failure::validation)?;
    match args.format {
        Format::Csv => write_surface_csv(&cells, sink(&args.output)?).map_err(Failure::runtime)?,
        Format::Json => emit_json(&cells, &args.output)?,
    }
    Ok(0)
}

fn reproduce(args: ReproduceArgs) -> Outcome {
    let system = load_system(&args.grid, &args.matrix)?;
    let opts = ReproduceOptions {
        seeds: args.seeds,
        shots: args.shots,
        ..ReproduceOptions::default()
    };
    let report = reproduce_paper(&system, &opts);
    match args.format {
        Format::Json => emit_json(&report, &args.output)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(&args.output)?);
            w.write_record(["id", "title", "status", "observed", "expected"])
                .map_err(Failure::runtime)?;
            for i in &report.items {
                let status = match (i.passed, i.informational) {
                    (_, true) => "info",
                    (true, false) => "pass",
                    (false, false) => "fail",
                };
                w.write_record([i.id.as_str(), &i.title, status, &i.observed, &i.expected])
                    .map_err(Failure::runtime)?;
            }
            w.flush().map_err(Failure::runtime)?;
        }
    }
    for i in report.failures() {
        eprintln!("{i}");
    }
    Ok(if report.all_passed() { 0 } else { EXIT_ACCEPTANCE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveClassical(a) => solve_classical(a),
        Command::SolveHhl(a) => solve_hhl_cmd(a),
        Command::SolveHmpea(a) => {
            let cfg = hybrid_config(a.m_prec, a.n_accur, a.n_redund, &a.run, a.sign_tolerance);
            run_hybrid(&a.input, cfg)
        }
        Command::SolveHspea(a) => {
            let cfg = hybrid_config(a.n_accur, a.n_accur, a.n_redund, &a.run, a.sign_tolerance);
            run_hybrid(&a.input, cfg)
        }
        Command::Sweep(a) => sweep(a),
        Command::Budget(a) => budget(a),
        Command::SuccessSurface(a) => surface(a),
        Command::ReproducePaper(a) => reproduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
