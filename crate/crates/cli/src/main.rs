use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{Config, Overrides};

/// Vanishing-point labels, targets and metrics from lane annotations.
#[derive(Parser, Debug)]
#[command(name = "lanevp", version, about)]
struct Cli {
    /// TOML config file; flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit lanes, intersect them and write labels.tsv
    Label,
    /// Lane-count and label-quality histograms in stats.json
    Stats,
    /// Render Gaussian targets for filtered labels into heatmaps/
    Heatmap {
        /// Label file, defaults to <out>/labels.tsv
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Export flip/shift decisions per epoch to augment.tsv
    Augment {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score predictions against labels: report.txt and curve.tsv
    Eval {
        /// Rows `frame_id x y confidence` or `frame_id NONE`, in working
        /// resolution
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Fit the horizon through accumulated prediction peaks
    Horizon {
        #[arg(long)]
        predictions: PathBuf,
        /// Ignore peaks at or below this confidence
        #[arg(long, default_value_t = 0.0)]
        min_confidence: f64,
    },
    /// Write the synthetic scene suite as a CULane-style dataset
    Synth,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<lanevp::Error> for CliError {
    fn from(e: lanevp::Error) -> Self {
        use lanevp::Error as E;
        match e {
            E::InvalidSpec(_) | E::InvalidGeometry { .. } => CliError::Usage(e.to_string()),
            E::SingularFit(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Label => commands::label(&cfg),
        Command::Stats => commands::stats(&cfg),
        Command::Heatmap { labels } => commands::heatmap(&cfg, labels),
        Command::Augment { labels } => commands::augment(&cfg, labels),
        Command::Eval { predictions, labels } => commands::eval(&cfg, &predictions, labels),
        Command::Horizon { predictions, min_confidence } => commands::horizon(&cfg, &predictions, min_confidence),
        Command::Synth => commands::synth(&cfg),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lanevp: {e}");
            ExitCode::from(e.code())
        }
    }
}
