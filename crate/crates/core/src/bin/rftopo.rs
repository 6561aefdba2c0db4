use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rftopo::config::ExperimentConfig;
use rftopo::experiment;
use rftopo::{Error, Result};

/// Online nonlinear topology identification with random Fourier features.
#[derive(Parser)]
#[command(name = "rftopo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the config and RFTOPO_OUTPUT_DIR.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data and ground truth for every run.
    Generate(Common),
    /// Stream the estimator over the data of every run.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Read samples from this CSV instead of the configured source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the pseudo-adjacency every k steps.
        #[arg(long)]
        emit_every: Option<usize>,
        /// Standardize every node to zero mean, unit variance first.
        #[arg(long)]
        standardize: bool,
        /// Continue from a checkpoint over the remaining samples of run `--run`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 0, requires = "resume")]
        run: usize,
    },
    /// Compute P_MD, P_FA and MSE curves from estimation outputs.
    Metrics(Common),
    /// Generate (if configured), estimate and compute metrics.
    Run(Common),
    /// Time every iteration of the streaming loop.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Number of samples to time.
        #[arg(long)]
        steps: Option<usize>,
        /// Time the growing-dictionary reference estimator instead.
        #[arg(long)]
        reference: bool,
        /// Timing passes; the per-step minimum is reported.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Re-run a single run from its recorded config.
    Replay {
        /// A run's `config.toml`.
        record: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load(config: &Path, output: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.apply_env();
    if let Some(dir) = output {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c.config, &c.output)?;
            for dir in experiment::cmd_generate(&cfg)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Estimate { common, data, emit_every, standardize, resume, run } => {
            let mut cfg = load(&common.config, &common.output)?;
            if let Some(k) = emit_every {
                cfg.estimate.emit_every = k;
            }
            cfg.estimate.standardize |= standardize;
            cfg.validate()?;
            match resume {
                Some(ckpt) => {
                    let mut record = cfg.resolve_run(run)?;
                    if let Some(path) = data {
                        record.generator = None;
                        record.data_csv = Some(path);
                    }
                    let dir = cfg.run_dir(run);
                    experiment::cmd_resume(&record, &ckpt, &dir)?;
                    println!("wrote {}", dir.display());
                }
                None => {
                    for dir in experiment::cmd_estimate(&cfg, data.as_deref())? {
                        println!("wrote {}", dir.display());
                    }
                }
            }
        }
        Command::Metrics(c) => {
            let cfg = load(&c.config, &c.output)?;
            let summary = experiment::cmd_metrics(&cfg)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Run(c) => {
            let cfg = load(&c.config, &c.output)?;
            let summary = experiment::run_all(&cfg)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Bench { common, steps, reference, repeats } => {
            let mut cfg = load(&common.config, &common.output)?;
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            cfg.validate()?;
            let path = experiment::cmd_bench(&cfg, steps, reference)?;
            println!("wrote {}", path.display());
        }
        Command::Replay { record, output } => {
            let cfg = load(&record, &output)?;
            if cfg.runs != 1 {
                return Err(Error::Config("replay expects a single-run record (runs = 1)".into()));
            }
            let summary = experiment::run_all(&cfg)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
    }
    Ok(())
}

/// 2: configuration, 3: data, 4: numeric divergence, 1: anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_)
        | Error::DimensionMismatch { .. }
        | Error::WarmupIncomplete { .. }
        | Error::NoSwitchPossible
        | Error::UndefinedNormalization
        | Error::Csv(_)
        | Error::Json(_) => 3,
        Error::Diverged { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
