//! `bench`: simulate the contest protocols on synthetic objectives, verify
//! the partial-evaluation noise model, and aggregate run files into
//! plot-ready CSV tables.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use gpbo::bench::io::{format_float, write_run_jsonl};
use gpbo::bench::report::generate_report;
use gpbo::bench::{make_problem_on, verify_noise, Problem, Protocol, RunReport};
use gpbo::bo::{run_preliminary, LoopParams};
use gpbo::fidelity::{run_final, FidelityParams};
use gpbo::Space;

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Synthetic black-box optimization benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded optimization under a contest protocol, writing JSONL.
    Run(RunArgs),
    /// Aggregate run files into CSV tables.
    Report(ReportArgs),
    /// Measure the noise model: CI coverage, exceedance, widths, consistency.
    VerifyNoise(VerifyNoiseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Preliminary,
    Final,
}

#[derive(Clone)]
struct GridSpec(Vec<usize>);

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let dims: Result<Vec<usize>, _> = s.split('x').map(|p| p.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() => Ok(GridSpec(d)),
        _ => Err(format!("expected a grid like 50x50, got {s:?}")),
    }
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("domain").required(true).args(["grid", "space"]))]
struct RunArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    /// Problem name: branin_grid, rosenbrock_grid, or ackley_grid.
    #[arg(long)]
    problem: String,
    /// Per-dimension cardinalities, e.g. 50x50.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridSpec>,
    /// Space definition file ({"dims": [{"name", "cardinality"}, ...]}).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Evaluations (preliminary) or fidelity units (final).
    #[arg(long)]
    budget: u64,
    #[arg(long, default_value_t = 5)]
    batch_size: usize,
    #[arg(long)]
    seed: u64,
    /// Disable the median early-stopping rule (final protocol).
    #[arg(long)]
    no_early_stop: bool,
    /// Replace the model-guided pipeline with pure random search.
    #[arg(long)]
    random_search: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Glob over run JSONL files, e.g. 'runs/*.jsonl'.
    #[arg(long = "in")]
    input: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyNoiseArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, value_parser = parse_grid, default_value = "50x50")]
    grid: GridSpec,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
}

enum CliError {
    Usage(String),
    Runtime(gpbo::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

fn usage(e: gpbo::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: gpbo::Error) -> CliError {
    CliError::Runtime(e)
}

fn build_problem(
    name: &str,
    grid: Option<&GridSpec>,
    space_file: Option<&PathBuf>,
    seed: u64,
) -> Result<Problem, CliError> {
    let space = match (grid, space_file) {
        (Some(GridSpec(dims)), None) => Space::from_cardinalities(dims).map_err(usage)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Space::from_json(&text).map_err(usage)?
        }
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --grid or --space".into(),
            ))
        }
    };
    make_problem_on(name, space, seed).map_err(usage)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let problem = build_problem(
        &args.problem,
        args.grid.as_ref(),
        args.space.as_ref(),
        args.seed,
    )?;
    let loop_params = if args.random_search {
        LoopParams {
            batch_size: args.batch_size,
            ..LoopParams::pure_random()
        }
    } else {
        LoopParams {
            batch_size: args.batch_size,
            ..LoopParams::default()
        }
    };
    let report: RunReport = match args.protocol {
        ProtocolArg::Preliminary => {
            run_preliminary(&problem, args.budget as usize, &loop_params, args.seed)
                .map_err(runtime)?
        }
        ProtocolArg::Final => {
            let fidelity = FidelityParams {
                fidelity_budget: args.budget,
                ..if args.no_early_stop {
                    FidelityParams::without_early_stopping()
                } else {
                    FidelityParams::default()
                }
            };
            run_final(&problem, &fidelity, &loop_params, args.seed).map_err(runtime)?
        }
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| runtime(e.into()))?;
        }
    }
    let mut file = fs::File::create(&args.out).map_err(|e| runtime(e.into()))?;
    write_run_jsonl(&report, &mut file).map_err(runtime)?;

    match report.protocol {
        Protocol::Preliminary => println!(
            "preliminary run: {} evaluations, best reward {}",
            report.observations.len(),
            report.best_reward().map_or("n/a".into(), format_float)
        ),
        Protocol::Final => println!(
            "final run: {} trials ({} completed, {} stopped, {} truncated), best valid reward {}",
            report.trials.len(),
            report.counts.completed,
            report.counts.stopped,
            report.counts.truncated,
            report.best_reward().map_or("n/a".into(), format_float)
        ),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = glob::glob(&args.input)
        .map_err(|e| CliError::Usage(format!("bad glob {:?}: {e}", args.input)))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(gpbo::Error::Io(e.into())))?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no run files match {:?}",
            args.input
        )));
    }
    let report = generate_report(&paths, &args.out_dir).map_err(runtime)?;
    println!(
        "aggregated {} run file(s) into {}",
        report.runs,
        args.out_dir.display()
    );
    for p in [
        &report.best_so_far,
        &report.trajectories,
        &report.early_stop_counts,
        &report.rates,
    ] {
        println!("  {}", p.display());
    }
    Ok(())
}

fn cmd_verify_noise(args: &VerifyNoiseArgs) -> Result<(), CliError> {
    let problem = build_problem(&args.problem, Some(&args.grid), None, args.seed)?;
    let v = verify_noise(&problem, args.draws, args.seed).map_err(runtime)?;
    println!(
        "problem {} seed {} draws {} per iteration",
        problem.name(),
        args.seed,
        v.draws
    );
    println!("iteration ci_width coverage exceedance");
    for it in &v.per_iteration {
        println!(
            "{} {} {} {}",
            it.iteration,
            format_float(it.ci_width),
            format_float(it.coverage),
            format_float(it.exceedance)
        );
    }
    println!("coverage {}", format_float(v.coverage));
    println!("exceedance {}", format_float(v.exceedance));
    println!(
        "ci_widths_strictly_decreasing {}",
        v.widths_strictly_decreasing
    );
    println!(
        "consistency_all_pairs {}",
        format_float(v.consistency.all_pairs)
    );
    println!(
        "consistency_top_pct {}",
        format_float(v.consistency.top_rate)
    );
    println!("consistency_top_count {}", v.consistency.top_count);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::VerifyNoise(args) => cmd_verify_noise(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
