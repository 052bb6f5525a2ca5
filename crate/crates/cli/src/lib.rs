//! Command-line orchestration: configuration, artifact layout and the
//! subcommands that chain the defense experiments end to end.

pub mod artifacts;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::artifacts::Layout;
use crate::config::{DataSource, ExperimentConfig, Profile};
use crate::pipeline::Ctx;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

pub const DEFAULT_OUT: &str = "argan-out";

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments.
    Validation(String),
    /// A stage ran before the artifact it depends on existed.
    MissingArtifact(String),
    /// A stage started and failed.
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::MissingArtifact(_) | CliError::Stage(_) => EXIT_STAGE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation_error",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Stage(_) => "stage_failure",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::MissingArtifact(m) => write!(f, "missing artifact: {m}"),
            CliError::Stage(m) => write!(f, "stage failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<argan_core::Error> for CliError {
    fn from(e: argan_core::Error) -> Self {
        match e {
            argan_core::Error::MissingArtifact(m) => CliError::MissingArtifact(m),
            other => CliError::Stage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "argan", version, about = "Generator-based reconstruction defense experiments")]
pub struct Cli {
    /// TOML experiment config; omitted keys take the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output root for all artifact directories.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the top-level `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Recompute even if artifacts for this config hash exist.
    #[arg(long, global = true)]
    pub force: bool,
    /// Preset the config file is overlaid on.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the dataset archive and its train/validation/test split.
    Ingest,
    /// Train Classifier #1, the black-box surrogate and the baseline-paired classifiers.
    TrainClassifier,
    /// Train the GAN set.
    TrainGan,
    /// Pick the generator checkpoint by validation accuracy on reconstructions.
    SelectGenerator,
    /// Finish the framework: reconstruct the training data and train Classifier #2.
    BuildArgan,
    /// Craft adversarial test sets for every attack, threat model and target.
    Attack,
    /// Evaluate all defenses on clean, black-box and white-box inputs.
    Evaluate,
    /// Perturbation-budget curves and the (L, R) sensitivity grid.
    Sweep,
    /// Collect tables, curves and metadata into `report/`.
    Report,
    /// Every stage on the LISA subset with the paper profile.
    ReproducePaper,
    /// Every stage on synthetic data with the desk profile.
    ReproduceDesk,
    /// Print the resolved config with provenance comments.
    Config,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::TrainClassifier => "train-classifier",
            Command::TrainGan => "train-gan",
            Command::SelectGenerator => "select-generator",
            Command::BuildArgan => "build-argan",
            Command::Attack => "attack",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Report => "report",
            Command::ReproducePaper => "reproduce-paper",
            Command::ReproduceDesk => "reproduce-desk",
            Command::Config => "config",
        }
    }
}

/// Resolves the config for `cli`, applying profile forcing and `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let forced = match cli.command {
        Command::ReproduceDesk => Some(Profile::Desk),
        Command::ReproducePaper => Some(Profile::Paper),
        _ => None,
    };
    if let (Some(f), Some(p)) = (forced, cli.profile) {
        if f != p {
            return Err(CliError::Validation(format!(
                "`{}` always uses the {f:?} profile, not {p:?}",
                cli.command.name()
            )));
        }
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), forced.or(cli.profile))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match (cli.command, cfg.dataset.source) {
        (Command::ReproduceDesk, DataSource::Lisa) => {
            return Err(CliError::Validation("reproduce-desk runs on synthetic data only".into()));
        }
        (Command::ReproducePaper, DataSource::Synthetic) => {
            return Err(CliError::Validation("reproduce-paper needs the LISA subset".into()));
        }
        _ => {}
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if cli.command == Command::Config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&root).map_err(|e| CliError::Stage(format!("{}: {e}", root.display())))?;
    std::fs::write(root.join("config.resolved.toml"), cfg.dump())
        .map_err(|e| CliError::Stage(format!("{}: {e}", root.display())))?;
    let ctx = Ctx::new(cfg, Layout::new(root), cli.force);
    match cli.command {
        Command::Ingest => pipeline::ingest(&ctx).map(drop),
        Command::TrainClassifier => pipeline::train_classifiers(&ctx).map(drop),
        Command::TrainGan => pipeline::train_gan(&ctx).map(drop),
        Command::SelectGenerator => pipeline::select_generator(&ctx).map(drop),
        Command::BuildArgan => pipeline::build_argan(&ctx).map(drop),
        Command::Attack => pipeline::attack(&ctx).map(drop),
        Command::Evaluate => pipeline::evaluate(&ctx).map(drop),
        Command::Sweep => pipeline::sweep(&ctx).map(drop),
        Command::Report => pipeline::report(&ctx).map(drop),
        Command::ReproducePaper | Command::ReproduceDesk => {
            let start = std::time::Instant::now();
            pipeline::reproduce(&ctx)?;
            let check: pipeline::DeskCheck =
                artifacts::read_json(&ctx.layout.file(artifacts::ArtifactDir::Report, pipeline::DESK_CHECK_FILE))?;
            let secs = start.elapsed().as_secs_f64();
            ctx.log.event(
                "summary",
                cli.command.name(),
                json!({"seconds": secs, "desk_check": check}),
            );
            println!("{}", serde_json::to_string_pretty(&check).expect("check serializes"));
            Ok(())
        }
        Command::Config => unreachable!("handled above"),
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
/// Failures print a JSON error record on stderr and append it to the run
/// log when the output root is known.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let record = json!({
                "event": "error",
                "subcommand": cli.command.name(),
                "kind": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            if let Some(root) = &cli.out {
                if root.is_dir() {
                    artifacts::RunLog::new(root).event(
                        "error",
                        cli.command.name(),
                        json!({"kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string()}),
                    );
                }
            }
            e.exit_code()
        }
    }
}
