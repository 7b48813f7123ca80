//! `coins`: data preparation, training, completion and evaluation.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coins_core::coins::RunMode;
use coins_core::data::RuleFlavor;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "coins", version, about = "Recursive rule-then-sentence story completion")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub flavor: Option<Flavor>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Beam width for all decoding.
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite an existing run in the output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Flavor {
    /// General rules (placeholder roles).
    Gr,
    /// Specific rules (story entities).
    Sr,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Oracle,
    IrOnly,
    NoIrWoSe,
    IrWoSe,
    Seg,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => RunMode::Full,
            Mode::Oracle => RunMode::Oracle,
            Mode::IrOnly => RunMode::IrOnly,
            Mode::NoIrWoSe => RunMode::NoIrWoSe,
            Mode::IrWoSe => RunMode::IrWoSe,
            Mode::Seg => RunMode::Seg,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a templated synthetic corpus with rule annotations.
    Synth {
        #[arg(long)]
        stories: Option<usize>,
        #[arg(long)]
        sentences: Option<usize>,
    },
    /// Convert a delimiter-separated annotation export to records JSONL.
    ImportGlucose {
        #[arg(long)]
        input: PathBuf,
        /// Tab-separated input.
        #[arg(long)]
        tsv: bool,
    },
    /// Build story-completion splits, optionally attaching annotated rules.
    BuildNsc {
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Build ending-generation splits from five-sentence stories.
    BuildSeg {
        #[arg(long)]
        stories: PathBuf,
    },
    /// Build the word vocabulary from stories and rule text.
    TrainVocab {
        #[arg(long, required = true, num_args = 1..)]
        stories: Vec<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Train a rule generator on annotated stories.
    TrainCsi {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
    /// Attach rules decoded by a rule generator to a completion corpus.
    Enrich {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        csi: PathBuf,
        #[arg(long)]
        nsc: PathBuf,
    },
    /// Jointly train the sentence model and the rule generator.
    TrainCoins {
        #[arg(long)]
        vocab: PathBuf,
        /// Completion corpus with rules (required unless --mode seg).
        #[arg(long)]
        nsc: Option<PathBuf>,
        /// Ending-generation corpus (with --mode seg).
        #[arg(long)]
        seg: Option<PathBuf>,
        /// Annotation records supplying Effect rules for --mode seg.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Start the rule generator from this checkpoint.
        #[arg(long)]
        csi: Option<PathBuf>,
    },
    /// Train the rule-free language-model baseline.
    TrainBaseline {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        nsc: PathBuf,
    },
    /// Complete stories and write completions, traces and rule memories.
    Complete {
        #[arg(long)]
        vocab: PathBuf,
        /// Sentence-model checkpoint.
        #[arg(long)]
        sentence: Option<PathBuf>,
        /// Rule-generator checkpoint.
        #[arg(long)]
        csi: Option<PathBuf>,
        /// Baseline checkpoint; replaces the recursive loop.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        nsc: Option<PathBuf>,
        #[arg(long)]
        seg: Option<PathBuf>,
    },
    /// Score completions against gold stories.
    Evaluate {
        /// Gold corpus (completion or ending-generation JSONL).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// System outputs, one file per seed.
        #[arg(long, num_args = 1..)]
        system: Vec<PathBuf>,
        /// Checkpoints whose perplexity on the gold corpus is reported,
        /// aligned with --system.
        #[arg(long, num_args = 1..)]
        ppl_model: Vec<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Items × raters CSV for Fleiss' kappa.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Print a generation trace.
    InspectTrace {
        /// Trace summary (`.json`) or its stem.
        trace: PathBuf,
    },
}

fn resolve(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(f) = g.flavor {
        cfg.flavor = match f {
            Flavor::Gr => RuleFlavor::General,
            Flavor::Sr => RuleFlavor::Specific,
        };
    }
    if let Some(m) = g.mode {
        cfg.mode = m.into();
    }
    if let Some(b) = g.beam {
        cfg.decode.beam = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = resolve(&cli.global).and_then(|cfg| commands::run(&cli, cfg));
    if let Err(e) = result {
        eprintln!("coins: {e}");
        std::process::exit(e.exit_code());
    }
}
