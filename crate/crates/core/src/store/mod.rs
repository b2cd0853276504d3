//! Per-label replacement mentions: curated lists plus rule-based generators.
//!
//! Store files are JSON:
//!
//! ```json
//! {"labels": {"내국인이름": {"mentions": ["홍길동"],
//!                            "generator": {"kind": "korean_name",
//!                                          "surnames": "tables/surnames.txt",
//!                                          "given_syllables": "tables/given.txt"}}}}
//! ```
//!
//! Table paths resolve relative to the store file. A label entry may also
//! name a `mentions_file` with one mention per line.

pub mod generators;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generators::{
    generate_account, generate_address, generate_name, generate_phone, generate_rrn, AddressTables,
    Generator, NameTables, Pattern, PatternItem, RrnConfig,
};

use crate::keying::{mention_rng, sha256_hex};
use crate::markup::{CLOSE, OPEN};
use crate::taxonomy::{unknown_labels, Taxonomy};

/// Mentions per label that curators aim for.
pub const COVERAGE_TARGET: usize = 100;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed store file {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("labels not in the taxonomy: {}", .0.join(", "))]
    UnknownLabel(Vec<String>),
    #[error("invalid mention {mention:?} for label {label}: {reason}")]
    InvalidMention {
        label: String,
        mention: String,
        reason: &'static str,
    },
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("missing or empty component table: {0}")]
    MissingComponentTable(String),
    #[error("no mention list or generator for label {0}")]
    NoSourceForLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreWarning {
    EmptyList { label: String },
}

impl fmt::Display for StoreWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreWarning::EmptyList { label } => {
                write!(
                    f,
                    "label {label} has an empty mention list and no generator"
                )
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
struct Entry {
    mentions: Vec<String>,
    generator: Option<Generator>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplacementStore {
    entries: BTreeMap<String, Entry>,
    warnings: Vec<StoreWarning>,
}

fn check_mention(label: &str, mention: &str) -> Result<(), StoreError> {
    let reason = if mention.is_empty() {
        "empty"
    } else if mention.contains('\n') || mention.contains('\r') {
        "contains a line break"
    } else if mention.contains(OPEN) || mention.contains(CLOSE) {
        "contains a marker delimiter"
    } else {
        return Ok(());
    };
    Err(StoreError::InvalidMention {
        label: label.to_string(),
        mention: mention.to_string(),
        reason,
    })
}

impl ReplacementStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends mentions to a label's list, skipping duplicates.
    pub fn insert_mentions<I, S>(&mut self, label: &str, mentions: I) -> Result<(), StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entry = self.entries.entry(label.to_string()).or_default();
        for m in mentions {
            let m = m.into();
            check_mention(label, &m)?;
            if !entry.mentions.contains(&m) {
                entry.mentions.push(m);
            }
        }
        Ok(())
    }

    pub fn set_generator(&mut self, label: &str, generator: Generator) -> Result<(), StoreError> {
        generator.validate()?;
        self.entries.entry(label.to_string()).or_default().generator = Some(generator);
        Ok(())
    }

    pub fn validate_labels(&self, taxonomy: &Taxonomy) -> Result<(), StoreError> {
        let unknown = unknown_labels(taxonomy, self.entries.keys().map(String::as_str));
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(StoreError::UnknownLabel(unknown))
        }
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let store = if text.trim().is_empty() {
            Self::new()
        } else {
            let file: StoreFile =
                serde_json::from_str(&text).map_err(|source| StoreError::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
            Self::from_file(file, base)?
        };
        store.validate_labels(taxonomy)?;
        Ok(store)
    }

    fn from_file(file: StoreFile, base: &Path) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (label, spec) in file.labels {
            store.entries.entry(label.clone()).or_default();
            store.insert_mentions(&label, spec.mentions)?;
            if let Some(rel) = &spec.mentions_file {
                store.insert_mentions(&label, read_lines(&base.join(rel))?)?;
            }
            if let Some(g) = spec.generator {
                store.set_generator(&label, g.resolve(base)?)?;
            }
        }
        store.warnings = store
            .entries
            .iter()
            .filter(|(_, e)| e.mentions.is_empty() && e.generator.is_none())
            .map(|(label, _)| StoreWarning::EmptyList {
                label: label.clone(),
            })
            .collect();
        Ok(store)
    }

    pub fn warnings(&self) -> &[StoreWarning] {
        &self.warnings
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mentions(&self, label: &str) -> &[String] {
        self.entries
            .get(label)
            .map(|e| e.mentions.as_slice())
            .unwrap_or(&[])
    }

    pub fn generator(&self, label: &str) -> Option<&Generator> {
        self.entries.get(label).and_then(|e| e.generator.as_ref())
    }

    pub fn has_source(&self, label: &str) -> bool {
        self.entries
            .get(label)
            .is_some_and(|e| !e.mentions.is_empty() || e.generator.is_some())
    }

    /// Deterministic draw for `(label, seed, draw_index)`. With both a list
    /// and a generator, each source is chosen with probability 1/2.
    pub fn sample(&self, label: &str, seed: u64, draw_index: u64) -> Result<String, StoreError> {
        let entry = self
            .entries
            .get(label)
            .filter(|e| !e.mentions.is_empty() || e.generator.is_some())
            .ok_or_else(|| StoreError::NoSourceForLabel(label.to_string()))?;
        let mut rng = mention_rng(seed, label, draw_index);
        let use_list = match (&entry.generator, entry.mentions.is_empty()) {
            (None, _) => true,
            (Some(_), true) => false,
            (Some(_), false) => rng.gen_bool(0.5),
        };
        Ok(if use_list {
            entry.mentions.choose(&mut rng).expect("non-empty").clone()
        } else {
            entry
                .generator
                .as_ref()
                .expect("generator")
                .generate(&mut rng)
        })
    }

    pub fn coverage(&self) -> CoverageReport {
        CoverageReport {
            target: COVERAGE_TARGET,
            labels: self
                .entries
                .iter()
                .map(|(label, e)| LabelCoverage {
                    label: label.clone(),
                    mentions: e.mentions.len(),
                    generated: e.generator.is_some(),
                })
                .collect(),
        }
    }

    /// Hash over every list and resolved generator table.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&self.entries).expect("store serializes");
        sha256_hex(&json)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn read_table(base: &Path, rel: &str) -> Result<Vec<String>, StoreError> {
    let path = base.join(rel);
    match read_lines(&path) {
        Ok(t) if !t.is_empty() => Ok(t),
        Ok(_) => Err(StoreError::MissingComponentTable(
            path.display().to_string(),
        )),
        Err(StoreError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Err(
            StoreError::MissingComponentTable(path.display().to_string()),
        ),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub target: usize,
    pub labels: Vec<LabelCoverage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelCoverage {
    pub label: String,
    pub mentions: usize,
    /// Generator-backed labels count as unbounded.
    pub generated: bool,
}

impl CoverageReport {
    pub fn below_target(&self) -> impl Iterator<Item = &LabelCoverage> {
        self.labels
            .iter()
            .filter(|l| !l.generated && l.mentions < self.target)
    }

    pub fn total_mentions(&self) -> usize {
        self.labels.iter().map(|l| l.mentions).sum()
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} labels, {} listed mentions, target {} per label",
            self.labels.len(),
            self.total_mentions(),
            self.target
        )?;
        for l in &self.labels {
            let status = if l.generated {
                "generated"
            } else if l.mentions >= self.target {
                "ok"
            } else {
                "below target"
            };
            writeln!(f, "{}\t{}\t{}", l.label, l.mentions, status)?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreFile {
    #[serde(default)]
    labels: BTreeMap<String, LabelSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelSpec {
    #[serde(default)]
    mentions: Vec<String>,
    mentions_file: Option<String>,
    generator: Option<GeneratorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum GeneratorSpec {
    KoreanName {
        surnames: String,
        given_syllables: String,
        #[serde(default = "default_given_lengths")]
        given_lengths: Vec<usize>,
    },
    KoreanAddress {
        tiers: Vec<String>,
        #[serde(default = "default_number_range")]
        number_range: (u32, u32),
    },
    ResidentRegistrationNumber {
        first_year: Option<i32>,
        last_year: Option<i32>,
    },
    PhoneNumber {
        pattern: Option<String>,
    },
    BankAccount {
        patterns: Option<Vec<String>>,
    },
    CustomPattern {
        pattern: String,
        syllables: Option<String>,
    },
}

fn default_given_lengths() -> Vec<usize> {
    vec![1, 2]
}

fn default_number_range() -> (u32, u32) {
    (1, 999)
}

impl GeneratorSpec {
    fn resolve(self, base: &Path) -> Result<Generator, StoreError> {
        Ok(match self {
            GeneratorSpec::KoreanName {
                surnames,
                given_syllables,
                given_lengths,
            } => Generator::KoreanName(NameTables {
                surnames: read_table(base, &surnames)?,
                given_syllables: read_table(base, &given_syllables)?,
                given_lengths,
            }),
            GeneratorSpec::KoreanAddress {
                tiers,
                number_range,
            } => Generator::KoreanAddress(AddressTables {
                tiers: tiers
                    .iter()
                    .map(|t| read_table(base, t))
                    .collect::<Result<_, _>>()?,
                number_range,
            }),
            GeneratorSpec::ResidentRegistrationNumber {
                first_year,
                last_year,
            } => {
                let d = RrnConfig::default();
                Generator::ResidentRegistrationNumber(RrnConfig {
                    first_year: first_year.unwrap_or(d.first_year),
                    last_year: last_year.unwrap_or(d.last_year),
                })
            }
            GeneratorSpec::PhoneNumber { pattern } => Generator::PhoneNumber(Pattern::compile(
                pattern
                    .as_deref()
                    .unwrap_or(generators::DEFAULT_PHONE_PATTERN),
                None,
            )?),
            GeneratorSpec::BankAccount { patterns } => {
                let patterns = patterns.unwrap_or_else(|| {
                    generators::DEFAULT_ACCOUNT_PATTERNS
                        .iter()
                        .map(|p| p.to_string())
                        .collect()
                });
                Generator::BankAccount {
                    patterns: patterns
                        .iter()
                        .map(|p| Pattern::compile(p, None))
                        .collect::<Result<_, _>>()?,
                }
            }
            GeneratorSpec::CustomPattern { pattern, syllables } => {
                let table = syllables.map(|s| read_table(base, &s)).transpose()?;
                Generator::CustomPattern(Pattern::compile(&pattern, table)?)
            }
        })
    }
}

/// Location of the store file shipped with this crate.
pub fn shipped_store_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/store/store.json")
}
