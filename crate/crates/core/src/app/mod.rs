//! Command-line front end: `simulate`, `verify`, `stability` and `sweep`.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 guard event, 64 usage
//! or configuration error.

pub mod config;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{analyze, RouthVerdict, StabilityReport};
use crate::dynamics::{integrate, Status};
use crate::error::Error;
use crate::scenarios::{Scenario, ScenarioId};

use config::{Overrides, ResolvedRun, RunConfig};
use output::{format_complex_list, format_value, stack_label, status_label, RunSummary};
use verify::VerifyOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_GUARD: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "metricguard",
    version,
    about = "Constraint-enforcing feedback via metric completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one scenario and write its trajectory CSV.
    Simulate(RunArgs),
    /// Run the oracle battery on one scenario or `all`.
    Verify(VerifyArgs),
    /// Equilibrium, linearization, characteristic polynomial and Routh table.
    Stability(RunArgs),
    /// Run a parameter grid concurrently and write one summary row per point.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario name, optionally followed by key=value parameter overrides.
    items: Vec<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Parameter override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base law: barrier, constrained-cl or reference.
    #[arg(long)]
    base: Option<String>,
    /// Dissipation: none, simple or storage.
    #[arg(long)]
    dissipation: Option<String>,
    /// Dissipation gain.
    #[arg(long)]
    gain: Option<f64>,
    /// Target energy of storage dissipation.
    #[arg(long = "e-star")]
    e_star: Option<f64>,
    /// Integrator: dopri5 or rk4.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Scenario name or `all`.
    target: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies the synthesized control (fault injection).
    #[arg(long = "perturb-control", hide = true)]
    perturb_control: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Grid axis `key=v1,v2,...`; repeatable.
    #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
}

/// Error tagged with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a, out),
        Command::Verify(a) => verify_cmd(&a, out),
        Command::Stability(a) => stability(&a, out),
        Command::Sweep(a) => sweep(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn overrides(args: &RunArgs) -> Result<(RunConfig, Overrides), Failure> {
    let file = match &args.common.config {
        Some(path) => RunConfig::load(path).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    let mut flags = Overrides::default();
    for item in &args.items {
        if item.contains('=') {
            flags
                .params
                .push(config::parse_assignment(item).map_err(Failure::usage)?);
        } else if flags.scenario.is_none() {
            flags.scenario = Some(item.clone());
        } else {
            return Err(Failure::usage(format!("unexpected argument `{item}`")));
        }
    }
    for item in &args.common.set {
        flags
            .params
            .push(config::parse_assignment(item).map_err(Failure::usage)?);
    }
    let c = &args.common;
    flags.horizon = c.horizon;
    flags.seed = c.seed;
    flags.out = c.out.clone();
    flags.base = c.base.clone();
    flags.dissipation = c.dissipation.clone();
    flags.gain = c.gain;
    flags.e_star = c.e_star;
    flags.scheme = c.scheme.clone();
    Ok((file, flags))
}

/// Integrates a resolved run; the summary carries the wall time.
pub fn execute(run: &ResolvedRun) -> crate::Result<(crate::dynamics::Trajectory, RunSummary)> {
    let start = Instant::now();
    let closed = run.scenario.closed_loop(run.stack)?;
    let traj = integrate(&closed, &run.scenario.initial, run.horizon, &run.integrator)?;
    let summary = RunSummary::new(
        &run.scenario,
        run.stack,
        &traj,
        start.elapsed().as_secs_f64(),
    );
    Ok((traj, summary))
}

fn simulate(args: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (file, flags) = overrides(args)?;
    let run = config::resolve(&file, &flags).map_err(Failure::usage)?;
    let (traj, summary) = execute(&run).map_err(Failure::runtime)?;
    let n = run.scenario.system.dim();
    let m = run.scenario.system.control_count();
    let path =
        output::write_trajectory(&run.out_dir, &run.stem, &traj, n, m).map_err(Failure::runtime)?;
    for line in summary.lines() {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "csv={}", path.display());
    Ok(match traj.status {
        Status::HorizonReached => EXIT_OK,
        Status::Guard { .. } => EXIT_GUARD,
    })
}

fn verify_cmd(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let ids: Vec<ScenarioId> = if args.target.eq_ignore_ascii_case("all") {
        ScenarioId::ALL.to_vec()
    } else {
        vec![args.target.parse().map_err(Failure::usage)?]
    };
    let opts = VerifyOptions {
        seed: args.seed.unwrap_or(config::DEFAULT_SEED),
        control_factor: args.perturb_control.unwrap_or(1.0),
    };
    let reports: Vec<(ScenarioId, crate::Result<Vec<verify::CheckResult>>)> = ids
        .par_iter()
        .map(|&id| {
            (
                id,
                Scenario::build(id, &[]).map(|s| verify::battery(&s, &opts)),
            )
        })
        .collect();
    let mut all_pass = true;
    let mut total = 0;
    let mut passed = 0;
    for (id, report) in reports {
        match report {
            Ok(checks) => {
                for c in checks {
                    total += 1;
                    if c.passed {
                        passed += 1;
                    }
                    all_pass &= c.passed;
                    let _ = writeln!(out, "{}", c.line(id));
                }
            }
            Err(e) => {
                all_pass = false;
                let _ = writeln!(out, "FAIL {id} build: {e}");
            }
        }
    }
    let _ = writeln!(out, "checks_passed={passed}/{total}");
    Ok(if all_pass { EXIT_OK } else { EXIT_FAILURE })
}

/// Human-readable report followed by a `[stability]` key=value block.
pub fn render_stability(scenario: &Scenario, label: &str, report: &StabilityReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {} with {label}", scenario.id);
    let _ = writeln!(s, "equilibrium {:?}", report.equilibrium.as_slice());
    let _ = writeln!(s, "Jacobian:");
    for row in report.jacobian.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6e}")).collect();
        let _ = writeln!(s, "  [{}]", cells.join(" "));
    }
    let sp = &report.spectrum;
    let _ = writeln!(
        s,
        "characteristic polynomial (highest power first): {:?}",
        sp.coefficients
    );
    let _ = writeln!(s, "structural zero roots: {}", sp.structural_zeros);
    let _ = writeln!(s, "nontrivial factor: {:?}", sp.factor);
    let _ = writeln!(s, "Routh first column: {:?}", sp.routh.first_column);
    let _ = writeln!(s, "eigenvalues:");
    for l in &sp.eigenvalues {
        let _ = writeln!(s, "  {:.9e} {:+.9e}i", l.re, l.im);
    }
    let verdict = match sp.routh.verdict {
        RouthVerdict::Stable => "stable".to_string(),
        RouthVerdict::Marginal => "marginal".to_string(),
        RouthVerdict::Unstable { sign_changes } => format!("unstable({sign_changes})"),
    };
    let _ = writeln!(s, "[stability]");
    let _ = writeln!(s, "scenario={}", scenario.id);
    let _ = writeln!(s, "feedback={label}");
    let eq: Vec<String> = report
        .equilibrium
        .iter()
        .map(|v| format_value(*v))
        .collect();
    let _ = writeln!(s, "equilibrium={}", eq.join(";"));
    let coeffs: Vec<String> = sp.coefficients.iter().map(|v| format_value(*v)).collect();
    let _ = writeln!(s, "coefficients={}", coeffs.join(";"));
    let _ = writeln!(s, "structural_zeros={}", sp.structural_zeros);
    let _ = writeln!(s, "routh={verdict}");
    let _ = writeln!(s, "eigenvalues={}", format_complex_list(&sp.eigenvalues));
    let _ = writeln!(s, "classification={:?}", sp.classification);
    s
}

fn stability(args: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (file, flags) = overrides(args)?;
    let run = config::resolve(&file, &flags).map_err(Failure::usage)?;
    let guess = run.scenario.equilibrium_guess.clone().ok_or_else(|| {
        Failure::usage(format!("{} has no documented equilibrium", run.scenario.id))
    })?;
    let closed = run
        .scenario
        .closed_loop(run.stack)
        .map_err(Failure::runtime)?;
    let report = analyze(&closed, &guess).map_err(Failure::runtime)?;
    let _ = write!(
        out,
        "{}",
        render_stability(&run.scenario, &stack_label(&run.stack), &report)
    );
    Ok(EXIT_OK)
}

/// One sweep row: the grid point and either a summary or the error it hit.
pub struct SweepRow {
    pub point: Vec<(String, f64)>,
    pub result: crate::Result<RunSummary>,
}

/// Runs every grid point in parallel; rows come back in grid order.
pub fn run_sweep(
    id: ScenarioId,
    file: &RunConfig,
    flags: &Overrides,
    grid: &[Vec<(String, f64)>],
) -> Vec<SweepRow> {
    let base = config::merged_params(file, flags);
    grid.par_iter()
        .map(|point| {
            let mut params = base.clone();
            for (k, v) in point {
                params.retain(|(name, _)| name != k);
                params.push((k.clone(), *v));
            }
            let result = config::resolve_with_params(id, file, flags, &params)
                .and_then(|run| execute(&run))
                .map(|(_, summary)| summary);
            SweepRow {
                point: point.clone(),
                result,
            }
        })
        .collect()
}

fn guard_time(status: &Status) -> Option<f64> {
    match status {
        Status::Guard { t, .. } => Some(*t),
        Status::HorizonReached => None,
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let axes: Vec<&str> = rows
        .first()
        .map(|r| r.point.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["row".to_string()];
    header.extend(axes.iter().map(|a| a.to_string()));
    header.extend(
        [
            "status",
            "guard_t",
            "t_end",
            "min_margin",
            "min_confinement",
            "energy",
            "steps",
            "error",
        ]
        .map(String::from),
    );
    let _ = writeln!(s, "{}", header.join(","));
    for (i, row) in rows.iter().enumerate() {
        let mut cells = vec![i.to_string()];
        cells.extend(row.point.iter().map(|(_, v)| format_value(*v)));
        match &row.result {
            Ok(sum) => {
                let energy = match &sum.energy {
                    output::EnergyReport::Drift(d) => *d,
                    output::EnergyReport::Decrease { total, .. } => *total,
                    output::EnergyReport::Storage { end, .. } => *end,
                };
                cells.push(match sum.status {
                    Status::HorizonReached => "horizon_reached".into(),
                    _ => "guard".into(),
                });
                cells.push(
                    guard_time(&sum.status)
                        .map(format_value)
                        .unwrap_or_default(),
                );
                cells.push(format_value(sum.t_end));
                cells.push(format_value(sum.min_margin));
                cells.push(format_value(sum.min_confinement));
                cells.push(format_value(energy));
                cells.push(sum.steps.to_string());
                cells.push(String::new());
            }
            Err(e) => {
                cells.push("error".into());
                cells.extend(std::iter::repeat_n(String::new(), 6));
                cells.push(format!("\"{}\"", e.to_string().replace('"', "'")));
            }
        }
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

fn sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (file, mut flags) = overrides(&args.run)?;
    for axis in &args.grid {
        flags
            .grid
            .push(config::parse_grid_axis(axis).map_err(Failure::usage)?);
    }
    let id = config::scenario_id(&file, &flags).map_err(Failure::usage)?;
    let grid = config::expand_grid(&config::grid_axes(&file, &flags));
    if grid.is_empty() {
        return Err(Failure::usage("sweep grid is empty"));
    }
    // Validate every point before spending time on any of them.
    let base = config::merged_params(&file, &flags);
    for point in &grid {
        let mut params = base.clone();
        params.extend(point.iter().cloned());
        Scenario::build(id, &params).map_err(Failure::usage)?;
    }
    let rows = run_sweep(id, &file, &flags, &grid);
    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.output.as_ref().and_then(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT_DIR));
    fs::create_dir_all(&out_dir).map_err(|e| Failure::runtime(Error::Invalid(e.to_string())))?;
    let path = out_dir.join(format!("{}_sweep.csv", id.name()));
    fs::write(&path, sweep_csv(&rows))
        .map_err(|e| Failure::runtime(Error::Invalid(e.to_string())))?;
    let mut failed = 0;
    for (i, row) in rows.iter().enumerate() {
        let point: Vec<String> = row.point.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match &row.result {
            Ok(sum) => {
                let _ = writeln!(
                    out,
                    "row={i} {} status={}",
                    point.join(" "),
                    status_label(&sum.status)
                );
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(
                    out,
                    "row={i} {} status=error error=\"{e}\"",
                    point.join(" ")
                );
            }
        }
    }
    let _ = writeln!(out, "rows={} failed={failed}", rows.len());
    let _ = writeln!(out, "csv={}", path.display());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}
