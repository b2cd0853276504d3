//! Three-tiered PII categorization: main category → subcategory → granular
//! category, with annotation labels as leaves.
//!
//! The on-disk format is line oriented. Each non-comment line starts with a
//! tier keyword followed by the node name and an optional ` | gloss`:
//!
//! ```text
//! # comment
//! main direct 사건관계인 특정 정보 | Direct identifiers
//!   sub 인명 | Names
//!     granular 내국인이름 | Korean names
//!       label 내국인이름 | Korean names
//!   sub 주민등록번호 | Resident Registration Number
//!     label 주민등록번호 | Resident Registration Number
//! ```
//!
//! `main` takes a kind (`direct` or `quasi`) before its name. Indentation is
//! cosmetic. A `label` that directly follows a `sub` (no `granular` line in
//! between) is attached to an implicit granular node named after the
//! subcategory; such a subcategory may not later declare explicit granular
//! categories.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

const SHIPPED: &str = include_str!("../data/taxonomy.full");

/// Characters that may never appear in a label because they are part of the
/// marker syntax or of file formats that embed labels.
pub const FORBIDDEN_LABEL_CHARS: &[char] = &['<', '>', '/', '\\', '|'];

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate label {label:?} (first declared on line {first_line})")]
    DuplicateLabel {
        label: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: {tier} {name:?} has no parent tier")]
    OrphanTier {
        line: usize,
        tier: &'static str,
        name: String,
    },
    #[error("line {line}: {tier} {name:?} has no labels below it")]
    EmptyTier {
        line: usize,
        tier: &'static str,
        name: String,
    },
    #[error("line {line}: duplicate {tier} name {name:?} among siblings")]
    DuplicateSibling {
        line: usize,
        tier: &'static str,
        name: String,
    },
    #[error("line {line}: a second {kind} main category is not allowed")]
    DuplicateMainKind { line: usize, kind: IdentifierKind },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentifierKind {
    Direct,
    Quasi,
}

impl IdentifierKind {
    fn keyword(self) -> &'static str {
        match self {
            IdentifierKind::Direct => "direct",
            IdentifierKind::Quasi => "quasi",
        }
    }
}

impl fmt::Display for IdentifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiiLabel {
    pub label: String,
    pub gloss: String,
    pub kind: IdentifierKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularCategory {
    pub name: String,
    pub english_gloss: String,
    /// Synthesized for subcategories that list labels without a granular tier.
    pub implicit: bool,
    pub labels: Vec<PiiLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubCategory {
    pub name: String,
    pub english_gloss: String,
    pub children: Vec<GranularCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainCategory {
    pub name: String,
    pub english_gloss: String,
    pub kind: IdentifierKind,
    pub children: Vec<SubCategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LabelPath {
    main: usize,
    sub: usize,
    granular: usize,
    label: usize,
}

/// Where a label sits in the hierarchy. `granular` is `None` when the label
/// hangs off an implicit granular node.
#[derive(Debug, Clone, Copy)]
pub struct Classification<'a> {
    pub main: &'a MainCategory,
    pub sub: &'a SubCategory,
    pub granular: Option<&'a GranularCategory>,
    pub label: &'a PiiLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TierCounts {
    pub main: usize,
    pub sub: usize,
    /// Explicit granular categories only.
    pub granular: usize,
    pub implicit_granular: usize,
    pub labels: usize,
    pub direct_labels: usize,
    pub quasi_labels: usize,
}

impl fmt::Display for TierCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{} (main/sub/granular), {} implicit granular, {} labels ({} direct, {} quasi)",
            self.main,
            self.sub,
            self.granular,
            self.implicit_granular,
            self.labels,
            self.direct_labels,
            self.quasi_labels
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    main_categories: Vec<MainCategory>,
    label_index: BTreeMap<String, LabelPath>,
    /// Labels in file order; marker special IDs are assigned in this order.
    label_order: Vec<String>,
}

/// Check that `label` can be used inside markers and label-bearing files.
pub fn validate_label(label: &str) -> Result<(), String> {
    if label.is_empty() {
        return Err("label is empty".into());
    }
    if let Some(c) = label
        .chars()
        .find(|c| c.is_whitespace() || c.is_control() || FORBIDDEN_LABEL_CHARS.contains(c))
    {
        return Err(format!(
            "label {label:?} contains forbidden character {c:?}"
        ));
    }
    Ok(())
}

impl Taxonomy {
    /// The taxonomy shipped with the crate.
    pub fn shipped() -> Taxonomy {
        Taxonomy::parse(SHIPPED).expect("shipped taxonomy is valid")
    }

    pub fn shipped_source() -> &'static str {
        SHIPPED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
        let text = std::fs::read_to_string(path)?;
        Taxonomy::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Taxonomy, TaxonomyError> {
        Parser::default().run(text)
    }

    pub fn main_categories(&self) -> &[MainCategory] {
        &self.main_categories
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.label_order.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.label_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_order.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.label_index.contains_key(label)
    }

    /// Position of `label` in file order.
    pub fn label_position(&self, label: &str) -> Option<usize> {
        self.label_order.iter().position(|l| l == label)
    }

    pub fn classify(&self, label: &str) -> Result<Classification<'_>, TaxonomyError> {
        let path = self
            .label_index
            .get(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))?;
        let main = &self.main_categories[path.main];
        let sub = &main.children[path.sub];
        let granular = &sub.children[path.granular];
        Ok(Classification {
            main,
            sub,
            granular: (!granular.implicit).then_some(granular),
            label: &granular.labels[path.label],
        })
    }

    pub fn kind_of(&self, label: &str) -> Option<IdentifierKind> {
        self.label_index
            .get(label)
            .map(|p| self.main_categories[p.main].kind)
    }

    pub fn direct_identifier_labels(&self) -> BTreeSet<&str> {
        self.labels_of_kind(IdentifierKind::Direct)
    }

    pub fn quasi_identifier_labels(&self) -> BTreeSet<&str> {
        self.labels_of_kind(IdentifierKind::Quasi)
    }

    fn labels_of_kind(&self, kind: IdentifierKind) -> BTreeSet<&str> {
        self.label_index
            .iter()
            .filter(|(_, p)| self.main_categories[p.main].kind == kind)
            .map(|(l, _)| l.as_str())
            .collect()
    }

    pub fn tier_counts(&self) -> TierCounts {
        let subs = self.main_categories.iter().flat_map(|m| &m.children);
        let grans: Vec<&GranularCategory> = subs.clone().flat_map(|s| &s.children).collect();
        TierCounts {
            main: self.main_categories.len(),
            sub: subs.count(),
            granular: grans.iter().filter(|g| !g.implicit).count(),
            implicit_granular: grans.iter().filter(|g| g.implicit).count(),
            labels: self.label_index.len(),
            direct_labels: self.direct_identifier_labels().len(),
            quasi_labels: self.quasi_identifier_labels().len(),
        }
    }

    /// Canonical text form; `Taxonomy::parse(&t.serialize()) == t`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let node = |out: &mut String, indent: usize, kw: &str, name: &str, gloss: &str| {
            out.push_str(&" ".repeat(indent));
            out.push_str(kw);
            out.push(' ');
            out.push_str(name);
            if !gloss.is_empty() {
                out.push_str(" | ");
                out.push_str(gloss);
            }
            out.push('\n');
        };
        for main in &self.main_categories {
            let kw = format!("main {}", main.kind.keyword());
            node(&mut out, 0, &kw, &main.name, &main.english_gloss);
            for sub in &main.children {
                node(&mut out, 2, "sub", &sub.name, &sub.english_gloss);
                for gran in &sub.children {
                    let indent = if gran.implicit {
                        4
                    } else {
                        node(&mut out, 4, "granular", &gran.name, &gran.english_gloss);
                        6
                    };
                    for label in &gran.labels {
                        node(&mut out, indent, "label", &label.label, &label.gloss);
                    }
                }
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical form.
    pub fn content_hash(&self) -> String {
        crate::keying::sha256_hex(self.serialize().as_bytes())
    }
}

#[derive(Default)]
struct Parser {
    mains: Vec<MainCategory>,
    main_lines: Vec<usize>,
    label_lines: BTreeMap<String, usize>,
    // line numbers of the most recent open nodes, for empty-tier reporting
    sub_line: usize,
    gran_line: usize,
}

fn split_name_gloss(rest: &str) -> (String, String) {
    match rest.split_once(" | ") {
        Some((name, gloss)) => (name.trim().to_string(), gloss.trim().to_string()),
        None => {
            let rest = rest.trim();
            let rest = rest.strip_suffix(" |").unwrap_or(rest);
            (rest.trim().to_string(), String::new())
        }
    }
}

impl Parser {
    fn run(mut self, text: &str) -> Result<Taxonomy, TaxonomyError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let column = raw.len() - trimmed.len() + 1;
            let (keyword, rest) = trimmed
                .split_once(char::is_whitespace)
                .unwrap_or((trimmed, ""));
            match keyword {
                "main" => self.main(line, column, rest)?,
                "sub" => self.sub(line, column, rest)?,
                "granular" => self.granular(line, column, rest)?,
                "label" => self.label(line, column, rest)?,
                other => {
                    return Err(TaxonomyError::Parse {
                        line,
                        column,
                        message: format!(
                            "unknown keyword {other:?}; expected main, sub, granular or label"
                        ),
                    })
                }
            }
        }
        self.close_main()?;
        let mut label_index = BTreeMap::new();
        let mut label_order = Vec::new();
        for (mi, main) in self.mains.iter().enumerate() {
            for (si, sub) in main.children.iter().enumerate() {
                for (gi, gran) in sub.children.iter().enumerate() {
                    for (li, label) in gran.labels.iter().enumerate() {
                        label_index.insert(
                            label.label.clone(),
                            LabelPath {
                                main: mi,
                                sub: si,
                                granular: gi,
                                label: li,
                            },
                        );
                        label_order.push(label.label.clone());
                    }
                }
            }
        }
        Ok(Taxonomy {
            main_categories: self.mains,
            label_index,
            label_order,
        })
    }

    fn name(
        line: usize,
        column: usize,
        rest: &str,
        tier: &'static str,
    ) -> Result<(String, String), TaxonomyError> {
        let (name, gloss) = split_name_gloss(rest);
        if name.is_empty() {
            return Err(TaxonomyError::Parse {
                line,
                column,
                message: format!("{tier} has an empty name"),
            });
        }
        Ok((name, gloss))
    }

    fn main(&mut self, line: usize, column: usize, rest: &str) -> Result<(), TaxonomyError> {
        self.close_main()?;
        let (kind_word, rest) = rest
            .trim_start()
            .split_once(char::is_whitespace)
            .unwrap_or((rest.trim(), ""));
        let kind = match kind_word {
            "direct" => IdentifierKind::Direct,
            "quasi" => IdentifierKind::Quasi,
            other => {
                return Err(TaxonomyError::Parse {
                    line,
                    column,
                    message: format!("main category kind must be direct or quasi, found {other:?}"),
                })
            }
        };
        if self.mains.iter().any(|m| m.kind == kind) {
            return Err(TaxonomyError::DuplicateMainKind { line, kind });
        }
        let (name, gloss) = Self::name(line, column, rest, "main")?;
        if self.mains.iter().any(|m| m.name == name) {
            return Err(TaxonomyError::DuplicateSibling {
                line,
                tier: "main",
                name,
            });
        }
        self.mains.push(MainCategory {
            name,
            english_gloss: gloss,
            kind,
            children: Vec::new(),
        });
        self.main_lines.push(line);
        Ok(())
    }

    fn sub(&mut self, line: usize, column: usize, rest: &str) -> Result<(), TaxonomyError> {
        let (name, gloss) = Self::name(line, column, rest, "sub")?;
        self.close_sub()?;
        let Some(main) = self.mains.last_mut() else {
            return Err(TaxonomyError::OrphanTier {
                line,
                tier: "sub",
                name,
            });
        };
        if main.children.iter().any(|s| s.name == name) {
            return Err(TaxonomyError::DuplicateSibling {
                line,
                tier: "sub",
                name,
            });
        }
        main.children.push(SubCategory {
            name,
            english_gloss: gloss,
            children: Vec::new(),
        });
        self.sub_line = line;
        Ok(())
    }

    fn granular(&mut self, line: usize, column: usize, rest: &str) -> Result<(), TaxonomyError> {
        let (name, gloss) = Self::name(line, column, rest, "granular")?;
        self.close_granular()?;
        let Some(sub) = self.mains.last_mut().and_then(|m| m.children.last_mut()) else {
            return Err(TaxonomyError::OrphanTier {
                line,
                tier: "granular",
                name,
            });
        };
        if sub.children.iter().any(|g| g.implicit) {
            return Err(TaxonomyError::Parse {
                line,
                column,
                message: format!(
                    "subcategory {:?} already holds labels directly; it cannot also declare granular categories",
                    sub.name
                ),
            });
        }
        if sub.children.iter().any(|g| g.name == name) {
            return Err(TaxonomyError::DuplicateSibling {
                line,
                tier: "granular",
                name,
            });
        }
        sub.children.push(GranularCategory {
            name,
            english_gloss: gloss,
            implicit: false,
            labels: Vec::new(),
        });
        self.gran_line = line;
        Ok(())
    }

    fn label(&mut self, line: usize, column: usize, rest: &str) -> Result<(), TaxonomyError> {
        let (label, gloss) = Self::name(line, column, rest, "label")?;
        validate_label(&label).map_err(|message| TaxonomyError::Parse {
            line,
            column,
            message,
        })?;
        let Some(main) = self.mains.last_mut() else {
            return Err(TaxonomyError::OrphanTier {
                line,
                tier: "label",
                name: label,
            });
        };
        let kind = main.kind;
        let Some(sub) = main.children.last_mut() else {
            return Err(TaxonomyError::OrphanTier {
                line,
                tier: "label",
                name: label,
            });
        };
        if let Some(&first_line) = self.label_lines.get(&label) {
            return Err(TaxonomyError::DuplicateLabel {
                label,
                line,
                first_line,
            });
        }
        if sub.children.is_empty() {
            sub.children.push(GranularCategory {
                name: sub.name.clone(),
                english_gloss: sub.english_gloss.clone(),
                implicit: true,
                labels: Vec::new(),
            });
            self.gran_line = line;
        }
        let gran = sub.children.last_mut().expect("granular present");
        self.label_lines.insert(label.clone(), line);
        gran.labels.push(PiiLabel { label, gloss, kind });
        Ok(())
    }

    fn close_granular(&mut self) -> Result<(), TaxonomyError> {
        if let Some(g) = self
            .mains
            .last()
            .and_then(|m| m.children.last())
            .and_then(|s| s.children.last())
        {
            if g.labels.is_empty() {
                return Err(TaxonomyError::EmptyTier {
                    line: self.gran_line,
                    tier: "granular",
                    name: g.name.clone(),
                });
            }
        }
        Ok(())
    }

    fn close_sub(&mut self) -> Result<(), TaxonomyError> {
        self.close_granular()?;
        if let Some(s) = self.mains.last().and_then(|m| m.children.last()) {
            if s.children.is_empty() {
                return Err(TaxonomyError::EmptyTier {
                    line: self.sub_line,
                    tier: "sub",
                    name: s.name.clone(),
                });
            }
        }
        Ok(())
    }

    fn close_main(&mut self) -> Result<(), TaxonomyError> {
        self.close_sub()?;
        if let Some(m) = self.mains.last() {
            if m.children.is_empty() {
                return Err(TaxonomyError::EmptyTier {
                    line: *self.main_lines.last().unwrap_or(&0),
                    tier: "main",
                    name: m.name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Labels that must be unique across `taxonomy`; used by loaders of other
/// label-bearing files to reject unknown keys.
pub(crate) fn unknown_labels<'a>(
    taxonomy: &Taxonomy,
    labels: impl IntoIterator<Item = &'a str>,
) -> Vec<String> {
    let mut seen = HashSet::new();
    labels
        .into_iter()
        .filter(|l| !taxonomy.contains(l) && seen.insert(*l))
        .map(str::to_string)
        .collect()
}
