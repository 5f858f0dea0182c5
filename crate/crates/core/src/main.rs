use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vwshare::cli::{execute, plan, raw_csv, summary_csv, validate_config, Options, Scenario};
use vwshare::client::Strategy;
use vwshare::sim::SimConfig;

#[derive(Parser)]
#[command(name = "vwshare", version, about = "Virtual-world content retrieval simulator")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config and its violations.
    ValidateConfig { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Overhead,
    Delay,
    Load,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Improved,
    Basic,
    DistanceSorted,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "overhead")]
    scenario: ScenarioArg,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objects: Option<u32>,
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: u32,
    #[arg(long, value_enum)]
    dynamics: Option<Toggle>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Output directory for `<scenario>_raw.csv` and `<scenario>_summary.csv`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn validate(path: &PathBuf) -> Result<bool, String> {
    let (config, violations) = validate_config(&read(path)?).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&config).expect("plain config"));
    for v in &violations {
        println!("violation: {v}");
    }
    Ok(violations.is_empty())
}

fn run(args: RunArgs) -> Result<(), String> {
    let base = match &args.config {
        Some(path) => SimConfig::from_json(&read(path)?).map_err(|e| e.to_string())?,
        None => SimConfig::default(),
    };
    let scenario = match args.scenario {
        ScenarioArg::Overhead => Scenario::Overhead,
        ScenarioArg::Delay => Scenario::Delay,
        ScenarioArg::Load => Scenario::Load,
        ScenarioArg::Custom => Scenario::Custom,
    };
    let opts = Options {
        objects: args.objects,
        cycles: args.cycles,
        seed: args.seed,
        reps: args.reps,
        dynamics: args.dynamics.map(|t| matches!(t, Toggle::On)),
        strategy: args.strategy.map(|s| match s {
            StrategyArg::Improved => Strategy::Proximity,
            StrategyArg::Basic => Strategy::Basic,
            StrategyArg::DistanceSorted => Strategy::DistanceSorted,
        }),
    };
    let specs = plan(scenario, &base, &opts)?;
    let threads = args.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    eprintln!("{}: {} runs", scenario.name(), specs.len());
    let rows = execute(&specs, threads).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&args.out).map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    for (suffix, body) in [("raw", raw_csv(&rows)), ("summary", summary_csv(&rows))] {
        let path = args.out.join(format!("{}_{suffix}.csv", scenario.name()));
        std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::ValidateConfig { path }) => validate(&path).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(2) }),
        None => run(cli.run).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
