//! `flowedit` command-line workbench: solver benchmarks, inversion, dual-path
//! editing, layer analysis and metrics over tensor container files.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "flowedit", version, about = "Rectified-flow video editing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; omitted keys take defaults
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the root seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output artifacts (created if missing)
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Euler vs RF2 convergence study on an analytic field
    SolverBench {
        #[command(flatten)]
        common: Common,
    },
    /// Invert a video to its noise anchor
    Invert {
        #[command(flatten)]
        common: Common,
        /// Source video container; defaults to the configured synthetic video
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Dual-path edit with context enrichment
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Guidance responsiveness profile over a synthetic probe set
    AnalyzeLayers {
        #[command(flatten)]
        common: Common,
    },
    /// PSNR / SSIM between two video containers
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH")]
        candidate: PathBuf,
        /// [H, W] container; nonzero entries are included
        #[arg(long, value_name = "PATH")]
        mask: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("reading {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| ConfigError(format!("parsing {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))
}

/// Exit code for an error chain: config and shape problems map to 2,
/// numeric and domain problems to 3, everything else to 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flowedit_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Shape(_) | E::Config(_) => EXIT_CONFIG,
                E::Numeric { .. } | E::Domain(_) => EXIT_NUMERIC,
                E::Format(_) | E::Invariant(_) | E::Io(_) => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SolverBench { common } => {
            let cfg = load_config(&common)?;
            prepare_out_dir(&common.out_dir)?;
            commands::solver_bench(&cfg, &common.out_dir)
        }
        Command::Invert { common, input } => {
            let cfg = load_config(&common)?;
            prepare_out_dir(&common.out_dir)?;
            commands::invert(&cfg, input.as_deref(), &common.out_dir)
        }
        Command::Edit { common, input } => {
            let cfg = load_config(&common)?;
            prepare_out_dir(&common.out_dir)?;
            commands::edit(&cfg, input.as_deref(), &common.out_dir)
        }
        Command::AnalyzeLayers { common } => {
            let cfg = load_config(&common)?;
            prepare_out_dir(&common.out_dir)?;
            commands::analyze_layers(&cfg, &common.out_dir)
        }
        Command::Metrics {
            common,
            reference,
            candidate,
            mask,
        } => {
            load_config(&common)?;
            prepare_out_dir(&common.out_dir)?;
            commands::metrics(&reference, &candidate, mask.as_ref(), &common.out_dir)
        }
    }
}

/// Parse `argv` (including the program name), run the subcommand and
/// return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_CONFIG,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
