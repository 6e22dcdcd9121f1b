//! The `eegfm` command line: corpus generation, pre-training, per-subject
//! fine-tuning, evaluation, attention analysis and gradient checks.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eegfm_core::{GraphMode, TokenizerMode, VocabMode};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// A mistake in how the program was invoked.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Process exit status for a failed run: 1 usage, 2 data, 3 numeric.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use eegfm_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite(_) | E::Divergence { .. } | E::GradCheck(_) => EXIT_NUMERIC,
                E::InvalidArgument(_) | E::Unsupported(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

#[derive(Debug, Parser)]
#[command(
    name = "eegfm",
    version,
    about = "Heterogeneous-EEG pre-training and per-subject fine-tuning"
)]
pub struct Cli {
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-dataset corpus and its manifest.
    GenSynth(commands::synth::GenSynthArgs),
    /// Contrastive pre-training of the univariate encoder.
    Pretrain(commands::pretrain::PretrainArgs),
    /// Per-subject fine-tuning with top-k checkpoint ensembling.
    Finetune(commands::finetune::FinetuneArgs),
    /// Re-evaluate a fine-tuning run from its saved checkpoints.
    Eval(commands::eval::EvalArgs),
    /// Export attention connectivity and embeddings of a fine-tuning run.
    Interpret(commands::interpret::InterpretArgs),
    /// Finite-difference gradient checks of every model component.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

/// Options shared by commands that produce a run directory.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON configuration layered over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration value, e.g. `--set finetune.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Union,
    Intersection,
}

impl From<ModeArg> for VocabMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Union => VocabMode::Union,
            ModeArg::Intersection => VocabMode::Intersection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizerArg {
    Adaptive,
    FixedPatch,
}

impl From<TokenizerArg> for TokenizerMode {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::Adaptive => TokenizerMode::Adaptive,
            TokenizerArg::FixedPatch => TokenizerMode::FixedPatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Gat,
    Gcn,
    #[value(alias = "no-graph", alias = "none")]
    Nograph,
}

impl From<GraphArg> for GraphMode {
    fn from(g: GraphArg) -> Self {
        match g {
            GraphArg::Gat => GraphMode::Gat,
            GraphArg::Gcn => GraphMode::Gcn,
            GraphArg::Nograph => GraphMode::NoGraph,
        }
    }
}

/// Training budget presets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full training budget.
    #[default]
    Full,
    /// Small-corpus budget that runs in minutes on a laptop.
    Desk,
}

/// Prints progress to stderr unless quiet.
#[derive(Debug, Clone, Copy)]
pub struct Reporter {
    pub quiet: bool,
}

impl Reporter {
    pub fn say(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let r = Reporter { quiet: cli.quiet };
    match cli.command {
        Command::GenSynth(a) => commands::synth::run(&a, r),
        Command::Pretrain(a) => commands::pretrain::run(&a, r),
        Command::Finetune(a) => commands::finetune::run(&a, r),
        Command::Eval(a) => commands::eval::run(&a, r),
        Command::Interpret(a) => commands::interpret::run(&a, r),
        Command::Gradcheck(a) => commands::gradcheck::run(&a, r),
    }
}
