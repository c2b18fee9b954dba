use std::path::PathBuf;
use std::process::ExitCode;

use advts::experiment::{run_stage, ExperimentConfig, Stage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advts", version, about = "Adversarial attacks and defenses for LSTM time-series forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline model (with walk-forward CV if configured).
    Train(Common),
    /// Attack the baseline over the epsilon grid.
    Attack(Common),
    /// Train the configured defenses and compare them under attack.
    Defend(Common),
    /// Look-back window sweep.
    Sweep(Common),
    /// Rewrite tables and plot data from report.json.
    Report(Common),
    /// Run every stage, or one selected with --stage.
    All {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stage) = match cli.command {
        Command::Train(c) => (c, Stage::Train),
        Command::Attack(c) => (c, Stage::Attack),
        Command::Defend(c) => (c, Stage::Defend),
        Command::Sweep(c) => (c, Stage::Sweep),
        Command::Report(c) => (c, Stage::Report),
        Command::All { common, stage } => (common, stage),
    };
    let mut cfg = match ExperimentConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error [config]: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = common.out {
        cfg.output_dir = out;
    }
    match run_stage(&cfg, stage) {
        Ok(report) => {
            println!(
                "{}: stage {} done, report at {}",
                report.name,
                stage.name(),
                cfg.output_dir.join("report.json").display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::FAILURE
        }
    }
}
