use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use ratlab::experiment::{run_experiment, Command, ExperimentConfig, FailureKind, Overrides};

/// Rationalization experiments: data generation, RNP/A2R training,
/// landscape sweeps, oracles and equilibrium analysis.
#[derive(Parser, Debug)]
#[command(name = "ratlab", version, after_help = commands_help())]
struct Cli {
    /// One of the commands listed below.
    command: String,
    /// JSON config, or a manifest.json from an earlier run to replay it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Required for training commands.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Percent of units kept by top-q selection.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    explore: Option<f64>,
    /// Landscape grid points.
    #[arg(long)]
    grid: Option<usize>,
    /// Landscape training epochs per grid point.
    #[arg(long)]
    budget: Option<usize>,
}

fn commands_help() -> String {
    let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
    format!("Commands: {}", names.join(", "))
}

fn fail(kind: FailureKind, msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Ok(command) = cli.command.parse::<Command>() else {
        eprintln!("error: unknown command {:?}\n", cli.command);
        eprintln!("{}", Cli::command().render_usage());
        eprintln!("{}", commands_help());
        return ExitCode::from(2);
    };
    if command.trains() && cli.seed.is_none() {
        return fail(
            FailureKind::Validation,
            &format!("{command} requires --seed"),
        );
    }
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(FailureKind::Validation, &format!("{}: {e}", path.display())),
        },
        None => ExperimentConfig::default(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        lambda: cli.lambda,
        q: cli.q,
        explore: cli.explore,
        grid: cli.grid,
        budget: cli.budget,
    });
    match run_experiment(command, &config, &cli.out) {
        Ok(manifest) => {
            for f in &manifest.outputs {
                println!("{}  {}", f.sha256, cli.out.join(&f.file).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(FailureKind::of(&e), &e.to_string()),
    }
}
