//! `fedtlu` command-line front end: single runs, strategy comparisons and
//! the quadratic bound check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fedtlu_core::fed::Strategy;
use fedtlu_core::sim::{
    average_minima, run_experiment, run_matrix, summarize, write_json, write_report, write_score_dump, SimConfig,
    StrategySummary, Summary,
};
use fedtlu_core::theory::{sweep, SweepConfig};

#[derive(Parser, Debug)]
#[command(name = "fedtlu", version, about = "Federated simulation with selective layer updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its round CSV.
    Run(RunArgs),
    /// Check the loss-reduction bounds on random quadratics.
    TheoryCheck(TheoryArgs),
    /// Run a strategy-by-seed matrix and write one CSV per cell plus a summary.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long, default_value_t = 50)]
    problems: usize,
    /// Step sizes as products eta * L.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = SweepConfig::default().eta_l_grid)]
    eta_grid: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    points: usize,
    /// Check every proper layer subset rather than one per point.
    #[arg(long)]
    all_subsets: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "full,fedtlu,random,last")]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Re-partition the data for each seed as well.
    #[arg(long)]
    vary_data_seed: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load_config(path: &Path) -> Result<SimConfig, Failure> {
    SimConfig::load(path).with_context(|| format!("invalid config {}", path.display())).map_err(config_err)
}

/// `--out` first, then the environment override, then the config.
fn resolve_out_dir(flag: Option<PathBuf>, cfg: &SimConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output_dir())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(runtime_err)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(seed) = args.seed {
        cfg.seeds.experiment = seed;
    }
    let dir = resolve_out_dir(args.out, &cfg);
    let result = run_experiment(&cfg).map_err(runtime_err)?;
    create_dir(&dir)?;
    let stem = format!("{}_seed{}", cfg.strategy, cfg.seeds.experiment);
    let csv = dir.join(format!("{stem}.csv"));
    write_report(&result.records, &csv).map_err(runtime_err)?;
    if cfg.output.score_dump {
        write_score_dump(&result.scores, dir.join(format!("{stem}_scores.jsonl"))).map_err(runtime_err)?;
    }
    if let Some(s) = summarize(result.evaluation_records()) {
        println!("{}: min global ppl {:.4}, min local ppl {:.4}", cfg.strategy, s.min_global_ppl, s.min_local_ppl);
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_theory(args: TheoryArgs) -> Result<(), Failure> {
    let cfg = SweepConfig {
        problems: args.problems,
        dim: args.dim,
        num_layers: args.layers,
        points: args.points,
        all_subsets: args.all_subsets,
        eta_l_grid: args.eta_grid,
        seed: args.seed,
    };
    let reports = sweep(&cfg).map_err(config_err)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&reports, &args.out).map_err(runtime_err)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        println!("theory-check: PASS ({} reports)", reports.len());
        Ok(())
    } else {
        println!("theory-check: FAIL ({failed} of {} reports)", reports.len());
        Err(Failure::Runtime(anyhow::anyhow!("{failed} bound reports failed")))
    }
}

#[derive(serde::Serialize)]
struct CompareSummary {
    seeds: Vec<u64>,
    strategies: Vec<StrategySummary>,
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    if args.strategies.is_empty() || args.seeds == 0 {
        return Err(config_err(anyhow::anyhow!("need at least one strategy and one seed")));
    }
    let dir = resolve_out_dir(args.out, &cfg);
    let runs = run_matrix(&cfg, &args.strategies, args.seeds, args.vary_data_seed).map_err(runtime_err)?;
    create_dir(&dir)?;
    for run in &runs {
        let path = dir.join(format!("{}_seed{}.csv", run.strategy, run.experiment_seed));
        write_report(&run.result.records, &path).map_err(runtime_err)?;
    }
    let mut strategies = Vec::with_capacity(args.strategies.len());
    for &strategy in &args.strategies {
        let per_seed: Vec<Summary> = runs
            .iter()
            .filter(|r| r.strategy == strategy)
            .filter_map(|r| summarize(r.result.evaluation_records()))
            .collect();
        let mean = average_minima(&per_seed)
            .ok_or_else(|| runtime_err(anyhow::anyhow!("no evaluation rounds for {strategy}")))?;
        strategies.push(StrategySummary { strategy, per_seed, mean });
    }
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.experiment_seed).collect();
    seeds.dedup();
    let summary = CompareSummary { seeds, strategies };
    write_json(&summary, dir.join("summary.json")).map_err(runtime_err)?;

    println!("{:<8} {:>16} {:>16}", "strategy", "min global ppl", "min local ppl");
    for s in &summary.strategies {
        println!("{:<8} {:>16.4} {:>16.4}", s.strategy.as_str(), s.mean.min_global_ppl, s.mean.min_local_ppl);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::TheoryCheck(a) => cmd_theory(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Config(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
