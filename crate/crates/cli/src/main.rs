use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffcast::analytic::Mode;
use diffcast::params::Strategy;

use diffcast_cli::commands::{self, CliError, Figure, Output};
use diffcast_cli::config::{ConfigError, ExperimentConfig, ProtocolBlock, RunBlock};

#[derive(Parser)]
#[command(name = "diffcast", version, about = "Tune and simulate full-dump/differential broadcast of control state")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Overrides `protocol.strategy`.
    #[arg(long, global = true, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic report for the fixed or tuned triple.
    Analyze,
    /// Search for the cheapest feasible (N, n_f, n_d).
    Tune {
        /// Writes every evaluated candidate here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Simulate the fixed triple.
    Simulate {
        /// Writes the per-slot trace of run 0 here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Data behind the comparison, validation and sensitivity plots.
    Figures {
        #[arg(value_enum)]
        figure: Figure,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: diffcast::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: diffcast::Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError { path: "--config".into(), message: "a configuration file is required".into() })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { path: path.display().to_string(), message: e.to_string() })?;
    let mut config = ExperimentConfig::from_toml(&text)
        .map_err(|e| ConfigError { path: format!("{}: {}", path.display(), e.path), message: e.message })?;
    if let Some(seed) = cli.seed {
        config.run.get_or_insert_with(RunBlock::default).seed = Some(seed);
    }
    if let Some(strategy) = cli.strategy {
        match &mut config.protocol {
            Some(p) => p.strategy = strategy,
            None => {
                config.protocol = Some(ProtocolBlock {
                    strategy,
                    period: None,
                    retries_full: None,
                    retries_diff: None,
                    retry_limit: None,
                    static_period_limit: None,
                })
            }
        }
    }
    if let Some(out) = &cli.out {
        config.output.get_or_insert_with(Default::default).csv = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let mode = cli.mode.unwrap_or(Mode::Exact);
    let output: Output = match &cli.command {
        Command::Analyze => commands::analyze(&config, mode)?,
        Command::Tune { trace } => commands::tune(&config, mode, trace.as_deref())?,
        Command::Simulate { trace } => commands::simulate_cmd(&config, trace.as_deref())?.into(),
        Command::Figures { figure } => commands::figures(&config, *figure, cli.mode)?.into(),
    };
    output.table.write_path(config.csv_path().as_deref())?;
    if !output.infeasible.is_empty() {
        return Err(CliError::Infeasible(format!(
            "no (N, n_f, n_d) reaches p_thresh = {} for scenario {}",
            config.scenario.p_thresh,
            output.infeasible.join(", ")
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffcast: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
