//! `mucko` command-line front end.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use mucko::data::Split;

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "mucko", version, about = "Answer questions about images by reasoning over visual, semantic and fact graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; missing sections take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1/top-3 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predicted answer entity per instance.
    Predict {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export attention and gate traces.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Instances to trace, from the start of the split.
        #[arg(long, default_value_t = 20)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reasoning-step and retrieval-cutoff sweeps.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Reasoning steps, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Facts kept after scoring, e.g. 50,100.
        #[arg(long = "k", value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
        /// Relation types kept by the filter, e.g. 1,3,5.
        #[arg(long = "m", value_delimiter = ',')]
        m_values: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the standard structural variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(common.config.as_deref())?.with_seed(common.seed))
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Gen { common, out } => commands::gen(&config(&common)?, &out),
        Command::Train { common, dataset, out } => commands::train_cmd(&config(&common)?, &dataset, &out),
        Command::Eval {
            dataset,
            checkpoint,
            split,
            out,
        } => commands::eval(&dataset, &checkpoint, split.into(), out.as_deref()),
        Command::Predict {
            dataset,
            checkpoint,
            split,
            out,
        } => commands::predict_cmd(&dataset, &checkpoint, split.into(), out.as_deref()),
        Command::Trace {
            common,
            dataset,
            checkpoint,
            split,
            limit,
            out,
        } => commands::trace(&config(&common)?, &dataset, &checkpoint, split.into(), limit, &out),
        Command::Sweep {
            common,
            dataset,
            steps,
            k_values,
            m_values,
            out,
        } => commands::sweep(
            &config(&common)?,
            &dataset,
            &commands::SweepPlan {
                steps,
                k_values,
                m_values,
            },
            out.as_deref(),
        ),
        Command::Ablate { common, dataset, out } => commands::ablate(&config(&common)?, &dataset, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            let err = CliError::Usage(msg.join(" ").trim_start_matches("error: ").to_string());
            eprintln!("{}", err.diagnostic());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
