use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arlsim::config::{ConfigError, MacPolicy, ScenarioConfig};
use arlsim::experiment::{
    aggregate, aggregate_csv, compare, parse_aggregate_csv, row_for, rows_csv, run_scenario, sweep, trend_csv,
    CompareRules, RunError, SweepSpec, Verdict,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_TREND: u8 = 3;

#[derive(Parser)]
#[command(name = "arlsim", version, about = "MANET simulator with static and adaptive 802.11 retry limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file in `key = value` form; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its CSV row.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write an event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the speed x load x policy x seed grid and aggregate it.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated maximum speeds.
        #[arg(long, value_delimiter = ',', default_values_t = [4.0, 8.0, 12.0, 16.0, 20.0, 24.0])]
        speeds: Vec<f64>,
        /// Comma-separated connection counts.
        #[arg(long, value_delimiter = ',', default_values_t = [2, 8])]
        loads: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values = ["baseline", "adaptive"])]
        policies: Vec<String>,
        /// Number of seeds; seeds run from --seed (default 1) upward.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Check an aggregate CSV for the expected adaptive-vs-baseline trends.
    Compare {
        aggregate: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))
}

fn run(common: &Common, trace: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    if let Some(dir) = trace.and_then(Path::parent) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("cannot create {}: {e}", dir.display())))?;
    }
    let summary = run_scenario(&cfg, trace)?;
    let row = row_for(&cfg, &summary.ledger);
    let csv = rows_csv(std::slice::from_ref(&row));
    let flows: Vec<String> = summary.flows.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    let mut used = cfg.clone();
    used.flows = Some(arlsim::config::FlowList(summary.flows.clone()));
    write(&common.out_dir.join(format!("{}.csv", row.run_id)), &csv)?;
    write(&common.out_dir.join(format!("{}.cfg", row.run_id)), &used.serialize())?;
    print!("{csv}");
    eprintln!("flows: {}", flows.join(","));
    Ok(())
}

fn run_sweep(common: &Common, spec: SweepSpec, workers: usize) -> Result<(), Failure> {
    let base = load_config(common)?;
    let rows = sweep(&base, &spec, workers)?;
    let agg = aggregate(&rows);
    write(&common.out_dir.join("runs.csv"), &rows_csv(&rows))?;
    write(&common.out_dir.join("aggregate.csv"), &aggregate_csv(&agg))?;
    eprintln!("{} runs written to {}", rows.len(), common.out_dir.display());
    Ok(())
}

fn run_compare(aggregate_path: &Path, out_dir: Option<&Path>) -> Result<bool, Failure> {
    let text = fs::read_to_string(aggregate_path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", aggregate_path.display())))?;
    let rows = parse_aggregate_csv(&text).map_err(Failure::Config)?;
    let cells = compare(&rows, &CompareRules::default()).map_err(Failure::Config)?;
    let report = trend_csv(&cells);
    if let Some(dir) = out_dir {
        write(&dir.join("trends.csv"), &report)?;
    }
    print!("{report}");
    Ok(cells.iter().all(|c| c.verdict != Verdict::Fail))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, trace } => run(&common, trace.as_deref()).map(|()| true),
        Command::Sweep {
            common,
            speeds,
            loads,
            policies,
            seeds,
            workers,
        } => policies
            .iter()
            .map(|p| p.parse::<MacPolicy>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::Config)
            .and_then(|policies| {
                let first = common.seed.unwrap_or(1);
                let spec = SweepSpec {
                    speeds,
                    loads,
                    policies,
                    seeds: (first..first + seeds).collect(),
                };
                run_sweep(&common, spec, workers)
            })
            .map(|()| true),
        Command::Compare { aggregate, out_dir } => run_compare(&aggregate, out_dir.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("trend check failed");
            ExitCode::from(EXIT_TREND)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("run error: {msg}");
            ExitCode::from(EXIT_RUN)
        }
    }
}
