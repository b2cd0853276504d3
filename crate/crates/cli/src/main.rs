//! `deid`: command-line driver for the de-identification pipeline.
//!
//! Exit codes: 0 success, 1 warnings escalated by `--strict`, 2 input
//! error, 3 inputs that disagree with each other.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deid_core::datagen::ReplacementMode;
use deid_core::metrics::FpConvention;

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "deid",
    version,
    about = "De-identification pipeline for annotated court judgments"
)]
pub struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Treat warnings as errors (exit code 1).
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Morpheme dictionary file.
    #[arg(long, global = true)]
    pub dictionary: Option<PathBuf>,
    /// Vocabulary directory.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Anonymization policy file.
    #[arg(long, global = true)]
    pub policy: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Taxonomy operations.
    Taxonomy {
        #[command(subcommand)]
        cmd: TaxonomyCmd,
    },
    /// Parse a marked-up corpus and report entity counts.
    Parse {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Replacement store operations.
    Store {
        #[command(subcommand)]
        cmd: StoreCmd,
    },
    /// Train, apply or invert the tokenizer.
    Tokenizer {
        #[command(subcommand)]
        cmd: TokenizerCmd,
    },
    /// Generate training and validation instances.
    Gen(GenArgs),
    /// Tag a dataset file and write predictions.
    Tag(TagArgs),
    /// Score predictions against a dataset file.
    Eval(EvalArgs),
    /// Average several metric report files.
    Mean(MeanArgs),
    /// Replace identifiers with court-style placeholders.
    Anonymize(AnonymizeArgs),
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCmd {
    /// Load, validate and print tier counts.
    Check,
}

#[derive(Debug, Subcommand)]
pub enum StoreCmd {
    /// Load, validate and print per-label coverage.
    Check,
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    /// Train a vocabulary and write it to a directory.
    Train {
        /// Marked-up corpus (line-delimited JSON); markers are ignored.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Plain text file, one training line per line.
        #[arg(long)]
        lines: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode text (argument or stdin lines) to token IDs.
    Encode {
        text: Option<String>,
        /// Print one token per line with byte offsets.
        #[arg(long)]
        offsets: bool,
    },
    /// Decode token IDs to text.
    Decode {
        #[arg(required = true)]
        ids: Vec<u32>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Single,
    PerEpoch,
}

impl From<ModeArg> for ReplacementMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Single => ReplacementMode::Single,
            ModeArg::PerEpoch => ReplacementMode::PerEpoch,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of documents assigned to training.
    #[arg(long)]
    pub split: Option<f64>,
    /// Used only when no vocabulary is given and one is trained on the corpus.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Write B-/I- prefixed labels.
    #[arg(long)]
    pub bio: bool,
}

#[derive(Debug, Args)]
#[group(id = "tagger", required = true, multiple = false)]
pub struct TaggerChoice {
    /// Predict each instance's gold labels.
    #[arg(long)]
    pub oracle: bool,
    /// Longest-match lookup of store mentions.
    #[arg(long)]
    pub gazetteer: bool,
    /// External model: write requests or read its predictions.
    #[arg(long)]
    pub exchange: bool,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[command(flatten)]
    pub tagger: TaggerChoice,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prediction file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// With --exchange: write the request file for an external model.
    #[arg(long, requires = "exchange")]
    pub requests: Option<PathBuf>,
    /// With --exchange: the external model's prediction file.
    #[arg(long, requires = "exchange", conflicts_with = "requests")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConventionArg {
    /// Gold-outside tokens predicted as `c` count toward FP of `c`.
    IncludeOutside,
    ExcludeOutside,
}

impl From<ConventionArg> for FpConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::IncludeOutside => FpConvention::IncludeOutside,
            ConventionArg::ExcludeOutside => FpConvention::ExcludeOutside,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum)]
    pub fp_convention: Option<ConventionArg>,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Row name in the summary table.
    #[arg(long, default_value = "run")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct MeanArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value = "mean")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    /// Line-delimited JSON records `{doc_id, text}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Anonymized records, same format as the input.
    #[arg(long)]
    pub out: PathBuf,
    /// Find spans with the store gazetteer instead of reading markup.
    #[arg(long, conflicts_with = "predictions")]
    pub gazetteer: bool,
    /// Tagger predictions over the encoded input text (epoch 0, chunk 0).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the surface-to-placeholder ledger. It contains the original identifiers.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Leave particles after placeholders as written.
    #[arg(long)]
    pub no_particle_adjust: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let p = &mut cfg.paths;
    for (flag, slot) in [
        (&cli.taxonomy, &mut p.taxonomy),
        (&cli.store, &mut p.store),
        (&cli.dictionary, &mut p.dictionary),
        (&cli.vocab, &mut p.vocab),
        (&cli.policy, &mut p.policy),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.flags.strict |= cli.strict;
    let ctx = commands::Context::new(cfg);
    match cli.command {
        Command::Taxonomy {
            cmd: TaxonomyCmd::Check,
        } => commands::taxonomy_check(&ctx),
        Command::Parse { corpus } => commands::parse(&ctx, corpus),
        Command::Store {
            cmd: StoreCmd::Check,
        } => commands::store_check(&ctx),
        Command::Tokenizer { cmd } => commands::tokenizer(&ctx, cmd),
        Command::Gen(args) => commands::gen(&ctx, args),
        Command::Tag(args) => commands::tag(&ctx, args),
        Command::Eval(args) => commands::eval(&ctx, args),
        Command::Mean(args) => commands::mean(args),
        Command::Anonymize(args) => commands::anonymize(&ctx, args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
