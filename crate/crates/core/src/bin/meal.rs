use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use meal::cli::{cmd_analyze, cmd_distill, cmd_eval, cmd_pretrain, cmd_transfer, AnalyzeCommand, RunDir, TransferInit};
use meal::config::RunConfig;
use meal::trainer::InitMode;
use meal::transfer::TransferMode;
use meal::{Error, Result};

/// Ensemble soft-label distillation: teacher pretraining, distillation,
/// evaluation, diagnostics and transfer.
#[derive(Debug, Parser)]
#[command(name = "meal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set distill.total_epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
    /// Bit-reproducible execution. Runs are always single-threaded and seed-derived, so this is the default behavior.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let config = RunConfig::load(&self.config, &self.overrides)?;
        if self.deterministic {
            info!("deterministic execution");
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    HardLabelPretrained,
    Superior,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Finetune,
    LinearProbe,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured model on hard labels (teachers, baselines, student initializations).
    Pretrain(Common),
    /// Distill the configured teacher ensemble into the student.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Continue the run in the output directory from its latest checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_enum)]
        discriminator: Option<Switch>,
        #[arg(long, value_name = "LAMBDA")]
        adv_weight: Option<f64>,
        /// Student initialization.
        #[arg(long, value_enum)]
        init: Option<InitArg>,
    },
    /// Single-crop top-1/top-5 on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: the run's latest).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write diagnostic artifacts into a run's `analysis/` directory.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Fine-tune or linearly probe a checkpoint on the transfer dataset.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Backbone checkpoint, or `scratch` for the random-initialization control.
        #[arg(long, value_name = "CHECKPOINT|scratch")]
        init: String,
    },
}

#[derive(Debug, Args)]
struct RunArg {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Per-class accuracy and designated class-pair summaries.
    Classwise(RunArg),
    /// Mean ensemble prediction per ground-truth class.
    Supervision(RunArg),
    /// Penultimate-layer features for a class subset.
    Embeddings {
        #[command(flatten)]
        run: RunArg,
        /// Comma-separated class indices.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
    },
    /// Weight histograms of selected layers.
    Histogram {
        #[command(flatten)]
        run: RunArg,
        /// `first`, `middle`, `last`, `convs`, `all` or a layer name. Comma-separated.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<String>>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Weight percentiles of the tracked layer at every saved epoch.
    Percentiles(RunArg),
    /// Epoch-aligned comparison of two runs (deltas are A minus B).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let dir = cmd_pretrain(&common.load()?, common.force)?;
            println!("{}", dir.display());
        }
        Command::Distill {
            common,
            resume,
            discriminator,
            adv_weight,
            init,
        } => {
            let mut config = common.load()?;
            if let Some(d) = discriminator {
                config.distill.discriminator_enabled = matches!(d, Switch::On);
            }
            if let Some(w) = adv_weight {
                config.distill.adv_weight = w;
            }
            if let Some(i) = init {
                config.distill.init_mode = match i {
                    InitArg::Random => InitMode::Random,
                    InitArg::HardLabelPretrained => InitMode::HardLabelPretrained,
                    InitArg::Superior => InitMode::Superior,
                };
            }
            config.validate()?;
            if resume && common.force {
                return Err(Error::Config("--resume and --force are mutually exclusive".into()));
            }
            let dir = cmd_distill(&config, common.force, resume)?;
            println!("{}", dir.display());
        }
        Command::Eval { common, checkpoint } => {
            let acc = cmd_eval(&common.load()?, checkpoint.as_deref())?;
            println!("{}", serde_json::to_string(&acc)?);
        }
        Command::Analyze { what } => {
            let (run, command) = match what {
                Analyze::Classwise(r) => (r.run, AnalyzeCommand::Classwise),
                Analyze::Supervision(r) => (r.run, AnalyzeCommand::Supervision),
                Analyze::Embeddings { run, classes } => (run.run, AnalyzeCommand::Embeddings { classes }),
                Analyze::Histogram { run, layers, bins } => (run.run, AnalyzeCommand::Histogram { layers, bins }),
                Analyze::Percentiles(r) => (r.run, AnalyzeCommand::Percentiles),
                Analyze::Compare { a, b } => (a, AnalyzeCommand::Compare { other: b }),
            };
            for path in cmd_analyze(&RunDir::new(run).root, &command)? {
                println!("{}", path.display());
            }
        }
        Command::Transfer { common, mode, init } => {
            let mut config = common.load()?;
            if let Some(m) = mode {
                config.transfer.mode = match m {
                    ModeArg::Finetune => TransferMode::Finetune,
                    ModeArg::LinearProbe => TransferMode::LinearProbe,
                };
            }
            let dir = cmd_transfer(&config, &init.parse::<TransferInit>()?, common.force)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
