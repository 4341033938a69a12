//! `effsys`: generate the synthetic domain, train the classifiers, evaluate
//! them and simulate both serving topologies, writing reproducible artifacts.

mod artifacts;
mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Suite, TrainMode};
use config::TopologyChoice;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit code 1).
    Config(String),
    /// Failure while running a command (exit code 2).
    Runtime(String),
}

impl CliError {
    pub fn config(e: effsys::Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "effsys",
    version,
    about = "Efficiency-centric vs task-centric serving experiments on synthetic data"
)]
struct Cli {
    /// TOML experiment config; omitted sections use the defaults.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test/multi-label/out-of-domain data.
    Synth,
    /// Train a classifier on data/train.csv.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// With task-centric mode, train only this task.
        #[arg(long)]
        task: Option<String>,
    },
    /// Evaluate trained checkpoints.
    Eval {
        #[arg(long, value_enum)]
        suite: Suite,
    },
    /// Run one serving topology over the inference workload.
    Simulate {
        #[arg(long, value_enum)]
        topology: Option<TopologyChoice>,
        /// Use concurrent replicas instead of the deterministic simulator.
        #[arg(long)]
        live: bool,
    },
    /// Run both topologies on the same workload and report side by side.
    Compare,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(format!("out_dir={}", toml::Value::String(dir.display().to_string())));
    }
    if let Command::Simulate { topology, live } = &cli.command {
        if let Some(t) = topology {
            overrides.push(format!("sim.topology={}", t.name()));
        }
        if *live {
            overrides.push("sim.live=true".into());
        }
    }
    overrides.extend(cli.set.iter().cloned());
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train { mode, task } => commands::train(&cfg, mode, task.as_deref()),
        Command::Eval { suite } => commands::eval(&cfg, suite),
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::ShowConfig => {
            println!("# config_hash {}", cfg.hash());
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
