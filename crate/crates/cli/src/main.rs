//! `mesa`: batch driver for demonstrations, training, evaluation, navigation
//! runs, statistics and plots.

mod commands;
mod context;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::context::{CliError, Context};

#[derive(Parser)]
#[command(name = "mesa", version, about = "Crowd navigation experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the run seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for demonstrations and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: the config's output_dir, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ORCA demonstrations.
    Demo,
    /// Imitation learning followed by reinforcement learning.
    Train(commands::TrainArgs),
    /// Evaluate a policy and write metrics plus trajectories.
    Eval(commands::EvalArgs),
    /// Run the planner-guided navigation loop on a map.
    Nav(commands::NavArgs),
    /// Plan a global path on a map.
    Plan(commands::PlanArgs),
    /// Mann-Whitney U tests between two metrics reports.
    Stats(commands::StatsArgs),
    /// Trajectory and deviation plots from trajectory logs.
    Plot(commands::PlotArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let ctx = Context::new(g.config.as_deref(), g.seed, g.workers, g.out)?;
    match cli.command {
        Command::Demo => commands::demo(&ctx),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Nav(a) => commands::nav(&ctx, a),
        Command::Plan(a) => commands::plan(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Plot(a) => commands::plot(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mesa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
