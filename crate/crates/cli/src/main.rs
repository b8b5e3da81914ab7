use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stoch_h2hinf::bench::{report_outcome, run_experiment, Command, ExitStatus, ExperimentConfig};
use stoch_h2hinf::Result;

#[derive(Parser, Debug)]
#[command(
    name = "stoch-h2hinf",
    version,
    about = "Mixed H2/H-infinity control of systems with multiplicative noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Model-based coupled Riccati solve.
    Solve(Common),
    /// Model-based value iteration with the learning-loop stopping rule.
    Vi(Common),
    /// Model-free Q-learning on simulated trajectories.
    Qlearn(Common),
    /// Closed-loop simulation with given or solved gains.
    Simulate(Common),
    /// Q-learning on the builtin benchmark for all three probing cases.
    #[command(name = "bench-f16")]
    BenchF16(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `f16` or a directory with A1.txt A2.txt B1.txt C1.txt C2.txt.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, value_parser = ["1", "2", "3"])]
    case: Option<String>,
    /// Falls back to STOCH_H2HINF_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Data tuples per iteration.
    #[arg(long)]
    tuples: Option<usize>,
    /// Branched successors per tuple in mc mode.
    #[arg(long)]
    branches: Option<usize>,
    #[arg(long, value_parser = ["analytic", "mc"])]
    mode: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated initial state.
    #[arg(long)]
    x0: Option<String>,
    /// Gains file (`# K1`, `# K2` blocks) for simulate.
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Initial gains file for qlearn.
    #[arg(long)]
    initial_gains: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// auto, none, published or solve.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(command: Command, c: Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.command = command;
    let path = |p: PathBuf| p.display().to_string();
    let overrides = [
        ("system", c.system),
        ("case", c.case),
        ("seed", c.seed.map(|s| s.to_string())),
        ("tol", c.tol.map(|x| x.to_string())),
        ("max_iters", c.max_iters.map(|x| x.to_string())),
        ("tuples", c.tuples.map(|x| x.to_string())),
        ("branches", c.branches.map(|x| x.to_string())),
        ("mode", c.mode),
        ("gamma", c.gamma.map(|x| x.to_string())),
        ("x0", c.x0),
        ("gains", c.gains.map(path)),
        ("initial_gains", c.initial_gains.map(path)),
        ("steps", c.steps.map(|x| x.to_string())),
        ("reference", c.reference),
        ("out", c.out.map(path)),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.resolve_seed_from_env()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Vi(c) => (Command::Vi, c),
        Cmd::Qlearn(c) => (Command::Qlearn, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::BenchF16(c) => (Command::BenchF16, c),
    };
    let result = build_config(command, common).and_then(|cfg| run_experiment(&cfg));
    let status: ExitStatus = report_outcome(&result);
    ExitCode::from(status.code() as u8)
}
