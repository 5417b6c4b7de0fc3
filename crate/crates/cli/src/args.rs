//! The clap surface and command dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sigwgan_core::{Error, Result};

use crate::commands;
use crate::config::{self, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "sigwgan",
    version,
    about = "Signature-based conditional generation for filtering and prediction \
             of partially observed diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the training dataset and write it as CSV plus metadata.
    Simulate {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Train the generator, writing a checkpoint and a loss trace.
    Train {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Score a trained checkpoint against the closed-form filter on
    /// held-out trajectories.
    Evaluate {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Evaluate, then write a side-by-side filter/generator table.
    Compare {
        #[command(flatten)]
        flags: CommonFlags,
    },
}

/// Flags shared by every verb. Anything not given falls back to the config
/// file and then to the preset.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// JSON file whose fields override the preset defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in experiment preset supplying the defaults.
    #[arg(long, value_name = "NAME", value_parser = config::PRESET_NAMES)]
    pub preset: Option<String>,
    /// Master RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of training trajectories.
    #[arg(long)]
    pub m: Option<usize>,
    /// Descent epochs; 0 writes the initial checkpoint only.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Conditioning time; must be an interior grid knot.
    #[arg(long)]
    pub s: Option<f64>,
    /// Final time of the knot grid.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Signature truncation depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Latent draws per training loss evaluation.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Output directory (default runs/<preset>).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Which state the decoder field sees: the evolving one or the frozen
    /// initial value.
    #[arg(long, value_parser = ["frozen", "current"])]
    pub coupling: Option<String>,
}

impl From<CommonFlags> for Overrides {
    fn from(flags: CommonFlags) -> Self {
        Overrides {
            config: flags.config,
            preset: flags.preset,
            seed: flags.seed,
            m: flags.m,
            epochs: flags.epochs,
            s: flags.s,
            t_end: flags.t_end,
            depth: flags.depth,
            mc_samples: flags.mc_samples,
            out: flags.out,
            coupling: flags.coupling,
        }
    }
}

/// Resolves the configuration and dispatches to the requested command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { flags } => {
            commands::simulate::run(&config::resolve(&flags.into())?)?;
        }
        Command::Train { flags } => {
            commands::train::run(&config::resolve(&flags.into())?)?;
        }
        Command::Evaluate { flags } => {
            commands::evaluate::run(&config::resolve(&flags.into())?)?;
        }
        Command::Compare { flags } => {
            commands::compare::run(&config::resolve(&flags.into())?)?;
        }
    }
    Ok(())
}

/// Parses argv-style tokens (the binary name included) and runs them; how
/// the tests drive the full command surface in process.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Invalid(e.to_string()))?;
    run(cli)
}
