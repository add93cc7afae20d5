use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

use io::UsageError;

/// Real-time LMP pipeline: case inspection, state estimation, pricing,
/// price regions, attack construction and Monte Carlo experiments.
#[derive(Debug, Parser)]
#[command(name = "rtlmp", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a case; with --out, write the normalized case and its matrices.
    Case(CaseArgs),
    /// Estimate the state of one snapshot and run the residual detector.
    Estimate(EstimateArgs),
    /// Real-time LMPs under a given congestion pattern.
    Lmp(LmpArgs),
    /// Price region of a state and its one-line neighbors.
    Partition(PartitionArgs),
    /// Design an attack against one seeded snapshot.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Run a Monte Carlo scenario and write results.json, trials.csv,
    /// curve.csv and timing.json.
    Montecarlo(MontecarloArgs),
    /// Compare greedy and exhaustive pattern search on a meter scenario.
    CompareSearch(CompareArgs),
}

#[derive(Debug, Subcommand)]
enum AttackCommand {
    /// Worst bad meter data under model m1, m2 or m3.
    Meter(MeterArgs),
    /// Line-removal topology attack.
    Topology(TopologyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pipeline {
    Dc,
    Ac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BadDataModel {
    M1,
    M2,
    M3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Search {
    Exhaustive,
    Greedy,
}

#[derive(Debug, Args)]
struct CaseRef {
    /// Built-in case (t3, ieee14, ieee118) or path to a .json or .m file.
    #[arg(long)]
    case: String,
}

#[derive(Debug, Args)]
struct Output {
    /// Write machine-readable output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct Snapshot {
    /// Seed of the snapshot draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial index within the seed's stream.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Measurement vector (one value per line, optional label column)
    /// instead of a drawn snapshot.
    #[arg(long)]
    z: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CaseArgs {
    #[command(flatten)]
    case: CaseRef,
    /// Directory for case.json, F.csv, H.csv and ptdf.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary format: json, or csv for the branch table.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    case: CaseRef,
    #[command(flatten)]
    snapshot: Snapshot,
    /// Lines the operator believes open (ids or i-j pairs, comma separated).
    #[arg(long, default_value = "")]
    remove: String,
    /// False alarm probability of the detector.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Pipeline::Dc)]
    model: Pipeline,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct LmpArgs {
    #[command(flatten)]
    case: CaseRef,
    /// Congested lines (ids or i-j pairs, comma separated); empty means none.
    #[arg(long, default_value = "")]
    pattern: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    case: CaseRef,
    /// Phase angles (rad) of the non-reference buses, one per line.
    /// Defaults to the day-ahead dispatch state.
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct MeterArgs {
    #[command(flatten)]
    case: CaseRef,
    /// Bad data model.
    #[arg(long, value_enum)]
    model: BadDataModel,
    /// Budget grid: aᵀWa bounds for m1/m2, residual bounds for m3
    /// (m3 defaults to the detector threshold).
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    /// Lines whose flow and endpoint injection meters the attacker controls.
    /// Drawn at random from the seed when absent.
    #[arg(long)]
    suspects: Option<String>,
    /// Number of random lines when --suspects is absent.
    #[arg(long, default_value_t = 2)]
    lines_per_trial: usize,
    #[arg(long, value_enum, default_value_t = Search::Exhaustive)]
    search: Search,
    /// Pipeline the snapshot and the attacked data go through.
    #[arg(long, value_enum, default_value_t = Pipeline::Dc)]
    pipeline: Pipeline,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Candidate threshold (MW) around the line limits.
    #[arg(long, default_value_t = 10.0)]
    threshold: f64,
    /// Most candidate lines searched.
    #[arg(long, default_value_t = 12)]
    candidate_cap: usize,
    #[command(flatten)]
    snapshot: Snapshot,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct TopologyArgs {
    #[command(flatten)]
    case: CaseRef,
    /// Lines to remove, or "auto" for the worst feasible target.
    #[arg(long, default_value = "auto")]
    remove: String,
    /// Largest target size searched under --remove auto.
    #[arg(long, default_value_t = 2)]
    max_removals: usize,
    /// Lines the attacker controls under --remove auto; drawn at random
    /// when absent.
    #[arg(long)]
    suspects: Option<String>,
    #[arg(long, default_value_t = 2)]
    lines_per_trial: usize,
    #[arg(long, value_enum, default_value_t = Pipeline::Dc)]
    model: Pipeline,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[command(flatten)]
    snapshot: Snapshot,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct MontecarloArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario pipeline model.
    #[arg(long, value_enum)]
    model: Option<Pipeline>,
    /// Overrides the scenario case.
    #[arg(long)]
    case: Option<String>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Summary printed to standard output: json, or csv for the curve.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Scenario JSON file with a meter attack.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
