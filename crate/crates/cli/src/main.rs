mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "beliefdyn", version, about = "Belief dynamics under coordinated AI agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct Overrides {
    /// Replace the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the replicate count.
    #[arg(long)]
    pub replicates: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one config and write its trace, summary and terminal distribution.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Population JSONL replacing the config's population.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// External agent driving the AI posts: `tcp://host:port` or a shell command.
        #[arg(long)]
        adapter: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        adapter_timeout_ms: u64,
        #[arg(long)]
        force: bool,
    },
    /// Run a scenario (built-in name or scenario file); resumable per leg.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        force: bool,
    },
    /// Paired human-only vs. intervention replicates for one config.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic population as JSON Lines.
    GenPopulation {
        /// Built-in topic profile (abortion, brexit, capitalism, feminism).
        #[arg(long, conflicts_with = "shares")]
        topic: Option<String>,
        /// Target shares `favor,ni,against` (any positive scale).
        #[arg(long)]
        shares: Option<String>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        entropy_mean: Option<f64>,
        #[arg(long)]
        entropy_spread: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Pooled stance transition matrix of one or more trace files.
    TransitionMatrix {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Accuracy, Cohen's kappa and macro-F1 of predicted vs. gold stances.
    Agreement {
        /// Two-column CSV of `gold,pred` rows.
        #[arg(required_unless_present_all = ["gold", "pred"], conflicts_with_all = ["gold", "pred"])]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gold: Option<PathBuf>,
        #[arg(long, requires = "gold")]
        pred: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Jensen-Shannon divergence (bits) between two distributions or trace terminals.
    Jsd {
        /// `favor,ni,against` or a trace file.
        p: String,
        q: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

/// An error with its process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_USER: u8 = 2;
pub const EXIT_ADAPTER: u8 = 3;

impl Failure {
    pub fn user(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USER,
            error: error.into(),
        }
    }

    pub fn adapter(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_ADAPTER,
            error: error.into(),
        }
    }
}

impl From<beliefdyn::Error> for Failure {
    fn from(e: beliefdyn::Error) -> Self {
        match e {
            beliefdyn::Error::Adapter(_) => Failure::adapter(e),
            other => Failure::user(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::user(e)
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("BELIEFDYN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::user(anyhow::anyhow!("BELIEFDYN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::user)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            population,
            out,
            overrides,
            adapter,
            adapter_timeout_ms,
            force,
        } => commands::run(&config, population.as_deref(), &out, &overrides, adapter.as_deref(), adapter_timeout_ms, force),
        Command::Sweep {
            scenario,
            out,
            overrides,
            force,
        } => commands::sweep(&scenario, &out, &overrides, force),
        Command::Compare {
            config,
            population,
            out,
            overrides,
            force,
        } => commands::compare(&config, population.as_deref(), &out, &overrides, force),
        Command::GenPopulation {
            topic,
            shares,
            n,
            seed,
            entropy_mean,
            entropy_spread,
            out,
            force,
        } => commands::gen_population(
            topic.as_deref(),
            shares.as_deref(),
            n,
            seed,
            entropy_mean,
            entropy_spread,
            out.as_deref(),
            force,
        ),
        Command::TransitionMatrix { traces, format } => commands::transition_matrix(&traces, format),
        Command::Agreement {
            pairs,
            gold,
            pred,
            format,
        } => commands::agreement(pairs.as_deref(), gold.as_deref(), pred.as_deref(), format),
        Command::Jsd { p, q, format } => commands::jsd(&p, &q, format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
