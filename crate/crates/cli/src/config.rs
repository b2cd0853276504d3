//! Pipeline configuration file. Relative paths resolve against the file's
//! directory; command-line flags override every field.

use std::path::{Path, PathBuf};

use deid_core::datagen::{ReplacementMode, DEFAULT_WINDOW};
use deid_core::metrics::FpConvention;
use deid_core::tokenizer::DEFAULT_VOCAB_SIZE;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub flags: FlagsConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub taxonomy: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub mode: ReplacementMode,
    pub epochs: u32,
    pub seed: u64,
    pub split: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            mode: ReplacementMode::Single,
            epochs: 1,
            seed: 1200,
            split: 0.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub window: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsConfig {
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub bio: bool,
    #[serde(default)]
    pub no_particle_adjust: bool,
    #[serde(default)]
    pub fp_convention: FpConvention,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.taxonomy,
            &mut p.store,
            &mut p.dictionary,
            &mut p.vocab,
            &mut p.corpus,
            &mut p.output,
            &mut p.policy,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }
}
