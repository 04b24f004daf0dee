use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eggroll_harness::commands::{execute, Command, RunOptions};
use eggroll_harness::config::Config;

/// Low-rank evolution strategies and integer GRU pretraining experiments.
#[derive(Parser, Debug)]
#[command(name = "eggroll", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` parameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; checkpoints are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time in CSVs (makes them non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// EGGROLL vs OpenES on an analytic fitness.
    EsBench(Common),
    /// Integer ES pretraining of the EGG language model.
    EggTrain(Common),
    /// Marginal score-density curves for increasing rank.
    ScorePlot(Common),
    /// Low-rank gradient error against rank.
    RankDecay(Common),
    /// Numerical rank of a single update.
    RankLaw(Common),
    /// Decomposed vs naive population forward throughput.
    Microbench(Common),
    /// Sweep of the integer update threshold.
    TuneThreshold(Common),
    /// Large population vs a pair at equal data per step.
    PopTrend(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::EsBench(c) => (Command::EsBench, c),
        Sub::EggTrain(c) => (Command::EggTrain, c),
        Sub::ScorePlot(c) => (Command::ScorePlot, c),
        Sub::RankDecay(c) => (Command::RankDecay, c),
        Sub::RankLaw(c) => (Command::RankLaw, c),
        Sub::Microbench(c) => (Command::Microbench, c),
        Sub::TuneThreshold(c) => (Command::TuneThreshold, c),
        Sub::PopTrend(c) => (Command::PopTrend, c),
    };
    match run(cmd, common) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command, c: Common) -> anyhow::Result<Vec<PathBuf>> {
    if let Ok(v) = std::env::var("EGGROLL_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("EGGROLL_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n > 0, "EGGROLL_THREADS must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    execute(cmd, cfg, &RunOptions { seed: c.seed, out: c.out, timing: c.timing })
}
