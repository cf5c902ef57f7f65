//! `dlr`: synthetic data generation, training, evaluation and forecasting
//! for probabilistic dynamic line ratings.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use dlr_core::model::Variant;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or missing inputs.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] dlr_core::Error),
    /// A check ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: dlr_core::Error| e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "dlr",
    version,
    about = "Probabilistic dynamic line rating forecasting on line graphs"
)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate topology, weather and rating files.
    GenData {
        /// Built-in name (demo-20bus, tx-123) or JSON file.
        #[arg(long)]
        config: String,
        /// Dataset directory; defaults to the config's io.data_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train one model and save its checkpoint and loss curve.
    Train {
        #[arg(long)]
        config: String,
        /// Overrides model.variant.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on the test windows.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only used to locate the dataset and output directory.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train and score every configured variant on the same data.
    Bench {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Per-hour interval forecast of one line over the test windows.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Line id as listed in the topology.
        #[arg(long)]
        line: u32,
        /// Add the robust rating column (the lower bound).
        #[arg(long)]
        robust: bool,
        /// Also write an SVG band chart.
        #[arg(long)]
        svg: bool,
        /// Only this test window (0-based); all windows by default.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Finite-difference check of every op and model gradient.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Print a resolved config as JSON.
    ShowConfig {
        #[arg(long)]
        config: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out_dir } => commands::gen_data(&config, out_dir),
        Command::Train {
            config,
            variant,
            data_dir,
            out_dir,
        } => commands::train(&config, variant, data_dir, out_dir),
        Command::Eval {
            checkpoint,
            config,
            data_dir,
            out_dir,
        } => commands::eval(&checkpoint, config.as_deref(), data_dir, out_dir),
        Command::Bench {
            config,
            data_dir,
            out_dir,
        } => commands::bench(&config, data_dir, out_dir),
        Command::Forecast {
            checkpoint,
            line,
            robust,
            svg,
            window,
            data_dir,
            out_dir,
        } => commands::forecast(&checkpoint, line, robust, svg, window, data_dir, out_dir),
        Command::Gradcheck { seed, inject_fault } => commands::gradcheck(seed, inject_fault.as_deref()),
        Command::ShowConfig { config } => commands::show_config(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
