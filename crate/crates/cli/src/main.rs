//! `opfv`: generate data, train a DC-OPF proxy, attack it, tighten its ReLU
//! bounds, verify its worst-case violations and report the results.

mod config;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use opf_verify::attack::{AttackConfig, AttackError, AttackObjective, DEFAULT_ITERATIONS, DEFAULT_LAMBDA, DEFAULT_STARTS};
use opf_verify::bounds::{BoundsError, DEFAULT_NEURON_BUDGET};
use opf_verify::dataset::{DatasetError, DEFAULT_SAMPLES};
use opf_verify::dcopf::DcopfError;
use opf_verify::grid::GridError;
use opf_verify::nn::{NnError, TrainConfig, DEFAULT_HIDDEN};
use opf_verify::verify::{BnbLimits, VerifyError};
use serde_json::json;

use config::{FileConfig, Workdir};
use stages::{GenData, TargetKind, VerifyArgs};

#[derive(Debug, Parser)]
#[command(name = "opfv", version, about = "Worst-case verification of neural-network DC-OPF proxies")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory holding the run's artifacts.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// TOML file with defaults for every stage; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample demands by Latin hypercube and solve the DC-OPF for each.
    GenData(GenDataArgs),
    /// Train the proxy network on the dataset.
    Train(TrainArgs),
    /// Projected gradient ascent from the worst dataset points.
    Attack(AttackArgs),
    /// Compute pre-activation bounds for every ReLU.
    Tighten(TightenArgs),
    /// Solve the worst-case violation MILP by branch-and-bound.
    Verify(VerifyCmd),
    /// Render the result tables from the stored artifacts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Bundled grid name (case2, case3, case5) or a grid JSON file.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Pb,
    Flow,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    starts: Option<usize>,
    /// Step size as a fraction of each box dimension's width.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TightenArgs {
    /// ibp, crown or obbt.
    #[arg(long)]
    method: Option<String>,
    /// Per-neuron time budget for OBBT, in seconds.
    #[arg(long)]
    budget_sec: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Pb,
    Flow,
    AllLines,
}

#[derive(Debug, Args)]
struct VerifyCmd {
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Line index for `--target flow`.
    #[arg(long)]
    line: Option<usize>,
    /// Bounds file from `tighten`.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Attack report from `attack`, used as the initial incumbent.
    #[arg(long)]
    warm: Option<PathBuf>,
    /// Seconds per branch-and-bound solve.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    max_nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Extra working directories, one table row each.
    cases: Vec<PathBuf>,
}

fn seconds(value: f64, flag: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(value).map_err(|e| anyhow!("invalid {flag} {value}: {e}"))
}

fn run(cli: Cli) -> Result<String> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(workers) = cli.workers.or(file.workers) {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    }
    let dir = Workdir(cli.workdir.or(file.workdir.clone()).unwrap_or_else(|| PathBuf::from(".")));
    let seed = file.seed.unwrap_or(0);
    match cli.command {
        Command::GenData(a) => {
            let s = &file.gen_data;
            let args = GenData {
                grid: a.grid.or(s.grid.clone()).ok_or_else(|| anyhow!("--grid is required"))?,
                n: a.n.or(s.n).unwrap_or(DEFAULT_SAMPLES),
                seed: a.seed.or(s.seed).unwrap_or(seed),
            };
            stages::gen_data(&dir, &args)
        }
        Command::Train(a) => {
            let s = &file.train;
            let defaults = TrainConfig::default();
            let train_seed = a.seed.or(s.seed).unwrap_or(seed);
            let config = TrainConfig {
                learning_rate: a.lr.or(s.lr).unwrap_or(defaults.learning_rate),
                batch_size: a.batch.or(s.batch).unwrap_or(defaults.batch_size),
                max_epochs: a.epochs.or(s.epochs).unwrap_or(defaults.max_epochs),
                patience: a.patience.or(s.patience).unwrap_or(defaults.patience),
                seed: train_seed,
                ..defaults
            };
            let hidden = a.hidden.or(s.hidden.clone()).unwrap_or_else(|| DEFAULT_HIDDEN.to_vec());
            stages::train_stage(&dir, &hidden, &config, train_seed)
        }
        Command::Attack(a) => {
            let s = &file.attack;
            let objective = match (a.objective, s.objective.as_deref()) {
                (Some(ObjectiveArg::Pb), _) | (None, Some("pb")) => AttackObjective::PowerBalance,
                (Some(ObjectiveArg::Flow), _) | (None, Some("flow")) => AttackObjective::LineFlow,
                (None, None) => bail!("--objective is required (pb or flow)"),
                (None, Some(other)) => bail!("unknown attack objective `{other}` (pb or flow)"),
            };
            let config = AttackConfig {
                objective,
                lambda: a.lambda.or(s.lambda).unwrap_or(DEFAULT_LAMBDA),
                iterations: a.iters.or(s.iters).unwrap_or(DEFAULT_ITERATIONS),
                starts: a.starts.or(s.starts).unwrap_or(DEFAULT_STARTS),
                seed: a.seed.or(s.seed).unwrap_or(seed),
                lines: None,
            };
            stages::attack_stage(&dir, &config)
        }
        Command::Tighten(a) => {
            let s = &file.tighten;
            let method = a.method.or(s.method.clone()).ok_or_else(|| anyhow!("--method is required"))?;
            let budget = a.budget_sec.or(s.budget_sec).unwrap_or(DEFAULT_NEURON_BUDGET.as_secs_f64());
            stages::tighten_stage(&dir, &method, budget)
        }
        Command::Verify(a) => {
            let s = &file.verify;
            let target = match (a.target, s.target.as_deref()) {
                (Some(TargetArg::Pb), _) | (None, Some("pb")) => TargetKind::PowerBalance,
                (Some(TargetArg::AllLines), _) | (None, Some("all-lines")) => TargetKind::AllLines,
                (Some(TargetArg::Flow), _) | (None, Some("flow")) => {
                    TargetKind::Line(a.line.or(s.line).ok_or_else(|| anyhow!("--target flow needs --line"))?)
                }
                (None, None) => bail!("--target is required (pb, flow or all-lines)"),
                (None, Some(other)) => bail!("unknown target `{other}` (pb, flow or all-lines)"),
            };
            let limits = BnbLimits {
                max_nodes: a.max_nodes.or(s.max_nodes),
                time_limit: a.time_limit.or(s.time_limit).map(|t| seconds(t, "--time-limit")).transpose()?,
                gap: a.gap.or(s.gap).unwrap_or(BnbLimits::default().gap),
            };
            let bounds = a.bounds.or(s.bounds.clone());
            let warm = a.warm.or(s.warm.clone());
            let args = VerifyArgs { target, bounds: bounds.as_deref(), warm: warm.as_deref(), limits };
            Ok(stages::verify_stage(&dir, &args)?.0)
        }
        Command::Report(a) => {
            let mut dirs = vec![dir];
            dirs.extend(a.cases.into_iter().map(Workdir));
            let tables = report::build_tables(&dirs)?;
            Ok(match a.format {
                Format::Table => report::render_all(&tables),
                Format::Json => serde_json::to_string_pretty(&tables)? + "\n",
            })
        }
    }
}

/// Variant name of a library error, for the machine-readable record.
fn error_kind(err: &anyhow::Error) -> String {
    fn variant(debug: String) -> String {
        debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_string()
    }
    for cause in err.chain() {
        if let Some(BoundsError::Verify(inner)) = cause.downcast_ref::<BoundsError>() {
            return variant(format!("{inner:?}"));
        }
        macro_rules! try_kind {
            ($($t:ty),*) => {$(
                if let Some(e) = cause.downcast_ref::<$t>() {
                    return variant(format!("{e:?}"));
                }
            )*};
        }
        try_kind!(VerifyError, BoundsError, AttackError, NnError, DatasetError, DcopfError, GridError);
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "Io".into();
        }
    }
    "Error".into()
}

fn hint(kind: &str) -> Option<&'static str> {
    match kind {
        "UnboundedNeuron" => Some("run `opfv tighten --method ibp` (or crown, obbt) and pass the file with --bounds"),
        "BudgetZero" => Some("give --budget-sec a positive value"),
        "EmptyDataset" => Some("run `opfv gen-data` first"),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({"error": "Usage", "message": e.to_string().trim_end()});
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("OPFV_LOG").unwrap_or_else(|_| "warn".into()))
        .init();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let kind = error_kind(&err);
            let mut record = json!({"error": kind, "message": format!("{err:#}")});
            if let Some(h) = hint(&kind) {
                record["hint"] = json!(h);
            }
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_come_from_library_errors() {
        let e: anyhow::Error = VerifyError::UnboundedNeuron { layer: 0, index: 1 }.into();
        assert_eq!(error_kind(&e), "UnboundedNeuron");
        let wrapped: anyhow::Error = BoundsError::Verify(Box::new(VerifyError::RelaxationInfeasible)).into();
        assert_eq!(error_kind(&wrapped), "RelaxationInfeasible");
        assert_eq!(error_kind(&anyhow!("plain")), "Error");
    }

    #[test]
    fn cli_parses_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "opfv", "verify", "--target", "all-lines", "--bounds", "b.json", "--warm", "a.json", "--time-limit", "5",
            "--gap", "1e-6",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Verify(VerifyCmd { target: Some(TargetArg::AllLines), .. })));
        let cli = Cli::try_parse_from(["opfv", "train", "--hidden", "50,50,50", "--lr", "0.001", "--patience", "5"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.hidden, Some(vec![50, 50, 50]));
    }
}
