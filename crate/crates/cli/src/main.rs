//! `dcflow`: solve, perturb, simulate, benchmark and verify from the shell.
//!
//! Exit codes: 0 success (converged), 1 runtime failure, 2 iteration limit,
//! 3 bad input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use dcflow::cases;
use dcflow::dca::{history_csv, kkt_residual, DcaParams, DcaStatus, KktResidual, OuterRecord, WarmStart};
use dcflow::error::Error;
use dcflow::grid::{GridModel, OperatingPoint};
use dcflow::harness::alloc::CountingAlloc;
use dcflow::harness::bench::{bench_scaling, BenchCase};
use dcflow::harness::feeder::day_scenario;
use dcflow::harness::perturb::{perturb, PerturbSpec};
use dcflow::harness::reference::reference_point;
use dcflow::harness::sim::{compare_warm_cold, run_simulation, OpfPolicy, Policy, SimScenario};
use dcflow::harness::verify::{flat_point, verify, VerifyOptions};
use dcflow::matpower::{parse_matpower_case, MatpowerCase, MatpowerOptions, TapPolicy};
use dcflow::opf::solve_opf;
use dcflow::powerflow::{case_operating_point, default_operating_point};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "dcflow", version, about = "Curtailment AC-OPF by difference-of-convex programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one OPF instance, optionally from a perturbed start.
    Solve(SolveArgs),
    /// Write a perturbed, Kirchhoff-consistent starting point.
    Perturb(PerturbArgs),
    /// Run a time-series curtailment simulation.
    Simulate(SimulateArgs),
    /// Write the bundled 18-bus feeder day as a scenario file.
    Scenario(ScenarioArgs),
    /// Per-iteration time and memory against grid size.
    Bench(BenchArgs),
    /// Check the sparse path of a case against the dense oracle.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct StartArgs {
    /// Bundled case name (case9, case14, case30, case57, case118), a MATPOWER
    /// `.m` file or a grid `.json` file.
    case: String,
    /// Relative voltage perturbation magnitude.
    #[arg(long, conflicts_with = "target_violation")]
    perturb: Option<f64>,
    /// Rescale the perturbation until the largest violation (p.u.) is within
    /// 10% of this.
    #[arg(long)]
    target_violation: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    start: StartArgs,
    /// Inner iteration cap per outer iteration.
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    /// Stopping tolerance on the step and on the subproblem slack.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the outer-iteration history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Include wall-clock time in the report (makes it run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    start: StartArgs,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Write the report as JSON (stdout gets a summary either way).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write applied voltage magnitudes per step as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run the OPF policy warm and cold on the same scenario.
    #[arg(long)]
    compare_warm_cold: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    RuleBased,
    DcOpf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value_t = PolicyKind::DcOpf)]
    policy: PolicyKind,
    /// Rule-based cap as a fraction of rated in-feed.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 15.0)]
    dt_minutes: f64,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bundled case names or `synthetic:N`.
    #[arg(required = true)]
    cases: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    case: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Model(_) | Error::Dimension { .. } | Error::Json(_) | Error::Io(_) => {
                Failure::Input(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

/// A grid with its MATPOWER setpoints when it has any.
struct LoadedCase {
    name: String,
    grid: GridModel,
    matpower: Option<MatpowerCase>,
}

fn load_case(spec: &str) -> CliResult<LoadedCase> {
    if cases::text(spec).is_some() {
        let case = cases::load(spec)?;
        return Ok(LoadedCase { name: spec.into(), grid: case.grid.clone(), matpower: Some(case) });
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(input(format!("`{spec}` is neither a bundled case ({}) nor a file", cases::NAMES.join(", "))));
    }
    let text = read(path)?;
    let name = path.file_stem().map_or(spec.into(), |s| s.to_string_lossy().into_owned());
    if path.extension().is_some_and(|e| e == "json") {
        Ok(LoadedCase { name, grid: GridModel::from_json(&text)?, matpower: None })
    } else {
        let case = parse_matpower_case(&text, MatpowerOptions { taps: TapPolicy::Nominal })?;
        Ok(LoadedCase { name, grid: case.grid.clone(), matpower: Some(case) })
    }
}

#[derive(Serialize)]
struct StartInfo {
    case: String,
    buses: usize,
    lines: usize,
    seed: u64,
    /// Perturbation magnitude actually applied (absent for unperturbed starts).
    magnitude: Option<f64>,
    start_violation: f64,
}

/// The unperturbed start is the case's power flow; perturbations are applied
/// to the feasible reference state.
fn starting_point(args: &StartArgs) -> CliResult<(LoadedCase, OperatingPoint, StartInfo)> {
    let case = load_case(&args.case)?;
    let perturbing = args.perturb.is_some() || args.target_violation.is_some();
    let base = match (&case.matpower, perturbing) {
        (Some(mp), true) => reference_point(mp)?,
        (Some(mp), false) => case_operating_point(mp)?,
        (None, _) => default_operating_point(&case.grid, Complex64::new(1.0, 0.0))?,
    };
    let (op, magnitude) = if perturbing {
        let spec = PerturbSpec {
            seed: args.seed,
            magnitude: args.perturb.unwrap_or(0.01),
            target_violation: args.target_violation,
        };
        let p = perturb(&base, &case.grid, &spec)?;
        (p.op, Some(p.magnitude))
    } else {
        (base, None)
    };
    let info = StartInfo {
        case: case.name.clone(),
        buses: case.grid.n_buses(),
        lines: case.grid.n_branches(),
        seed: args.seed,
        magnitude,
        start_violation: op.max_violation(&case.grid).max(0.0),
    };
    Ok((case, op, info))
}

#[derive(Serialize)]
struct SolveReport {
    #[serde(flatten)]
    start: StartInfo,
    params: DcaParams,
    status: DcaStatus,
    outer_iters: usize,
    total_inner_iters: usize,
    objective: f64,
    max_violation: f64,
    final_beta: f64,
    /// First outer iteration whose violation is below the tolerance.
    first_feasible: Option<usize>,
    kkt: KktResidual,
    seconds: Option<f64>,
    history: Vec<OuterRecord>,
    voltages: Vec<Complex64>,
}

fn cmd_solve(args: &SolveArgs) -> CliResult<ExitCode> {
    let (case, op0, start) = starting_point(&args.start)?;
    let mut params = DcaParams { inner_iters: args.inner_iters, max_outer: args.max_outer, ..DcaParams::default() };
    if let Some(tol) = args.tol {
        params.eps_x = tol;
        params.eps_t = tol;
    }
    let clock = Instant::now();
    let sol = solve_opf(&case.grid, &op0, &params, &WarmStart::default())?;
    let seconds = clock.elapsed().as_secs_f64();
    let r = &sol.result;
    let kkt = kkt_residual(&sol.problem, &r.x_final, &r.multipliers)?;
    let report = SolveReport {
        status: r.status,
        outer_iters: r.outer_iters,
        total_inner_iters: r.total_inner_iters,
        objective: r.objective,
        max_violation: r.max_violation,
        final_beta: r.final_beta,
        first_feasible: r.history.iter().find(|h| h.t_actual < params.eps_t).map(|h| h.k),
        kkt,
        seconds: args.timing.then_some(seconds),
        history: r.history.clone(),
        voltages: sol.op.v.clone(),
        params,
        start,
    };
    println!(
        "{}: {:?} after {} outer / {} inner iterations; objective {:.6}, violation {:.3e} p.u. (start {:.3e})",
        report.start.case,
        report.status,
        report.outer_iters,
        report.total_inner_iters,
        report.objective,
        report.max_violation,
        report.start.start_violation
    );
    if let Some(msg) = &r.failure {
        eprintln!("inner failure: {msg}");
    }
    if let Some(path) = &args.json {
        write(path, &to_json(&report))?;
    }
    if let Some(path) = &args.history {
        write(path, &history_csv(&r.history))?;
    }
    Ok(match r.status {
        DcaStatus::Converged => ExitCode::SUCCESS,
        DcaStatus::IterLimit => ExitCode::from(2),
        DcaStatus::InnerFailure => ExitCode::from(1),
    })
}

#[derive(Serialize)]
struct PerturbReport {
    #[serde(flatten)]
    start: StartInfo,
    point: OperatingPoint,
}

fn cmd_perturb(args: &PerturbArgs) -> CliResult<ExitCode> {
    if args.start.perturb.is_none() && args.start.target_violation.is_none() {
        return Err(input("give --perturb or --target-violation"));
    }
    let (_, op, start) = starting_point(&args.start)?;
    println!(
        "{} seed {}: magnitude {:.4e}, max violation {:.4e} p.u.",
        start.case,
        start.seed,
        start.magnitude.unwrap_or(0.0),
        start.start_violation
    );
    let text = to_json(&PerturbReport { start, point: op });
    match &args.json {
        Some(path) => write(path, &text)?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(report: &dcflow::harness::sim::SimReport) {
    let (lo, hi) = report.v_range();
    println!(
        "{}: {} steps, {} interventions, {} fallbacks; in-feed {:.4} of {:.4} p.u.h (curtailed {:.4}); |v| in [{lo:.4}, {hi:.4}]",
        report.policy,
        report.horizon,
        report.interventions,
        report.fallbacks,
        report.infeed_energy,
        report.available_energy,
        report.curtailed_energy
    );
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<ExitCode> {
    let sc = SimScenario::from_json(&read(&args.scenario)?)?;
    if args.compare_warm_cold {
        let cmp = compare_warm_cold(&sc)?;
        summarize(&cmp.warm);
        summarize(&cmp.cold);
        println!(
            "mean inner iterations after the first solve: warm {:.1}, cold {:.1} ({:.1}% fewer)",
            cmp.warm_mean_inner,
            cmp.cold_mean_inner,
            100.0 * cmp.reduction()
        );
        if let Some(path) = &args.json {
            write(path, &to_json(&cmp))?;
        }
        if let Some(path) = &args.csv {
            write(path, &cmp.warm.voltage_csv(&sc.grid))?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let report = run_simulation(&sc)?;
    summarize(&report);
    if let Some(path) = &args.json {
        write(path, &to_json(&report))?;
    }
    if let Some(path) = &args.csv {
        write(path, &report.voltage_csv(&sc.grid))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(args: &ScenarioArgs) -> CliResult<ExitCode> {
    if !(args.dt_minutes > 0.0 && args.dt_minutes <= 24.0 * 60.0) {
        return Err(input("--dt-minutes must be in (0, 1440]"));
    }
    let policy = match args.policy {
        PolicyKind::RuleBased => Policy::RuleBased { fraction: args.fraction },
        PolicyKind::DcOpf => Policy::DcOpf(OpfPolicy::default()),
    };
    let sc = day_scenario(args.dt_minutes, policy);
    sc.validate()?;
    match &args.out {
        Some(path) => write(path, &sc.to_json())?,
        None => println!("{}", sc.to_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: &BenchArgs) -> CliResult<ExitCode> {
    let cases = args.cases.iter().map(|c| BenchCase::by_name(c)).collect::<Result<Vec<_>, _>>()?;
    let table = bench_scaling(&cases, args.repetitions, args.iterations)?;
    print!("{}", table.to_csv());
    let fmt = |s: Option<f64>| s.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    println!("time slope {}, memory slope {}", fmt(table.time_slope), fmt(table.memory_slope));
    if let Some(path) = &args.csv {
        write(path, &table.to_csv())?;
    }
    if let Some(path) = &args.json {
        write(path, &to_json(&table))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<ExitCode> {
    let case = load_case(&args.case)?;
    let op = match &case.matpower {
        Some(mp) => case_operating_point(mp).or_else(|_| flat_point(&case.grid))?,
        None => flat_point(&case.grid)?,
    };
    let report = verify(&case.grid, &op, &VerifyOptions { seed: args.seed, ..VerifyOptions::default() })?;
    println!("{}", to_json(&report));
    if let Some(path) = &args.json {
        write(path, &to_json(&report))?;
    }
    if report.passes() {
        println!("{}: all checks pass", case.name);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{}: checks FAILED", case.name);
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2, which is taken by the iteration
    // limit here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let out = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match out {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
