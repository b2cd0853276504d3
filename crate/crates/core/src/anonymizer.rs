//! Court-style anonymization of tagged text.
//!
//! Letters (A, B, ..., Z, AA, ...) replace names and entities in order of
//! first appearance. Numeric identifiers become numbered omissions counted
//! per noun. Descriptor-preserving labels get a letter while the generic
//! noun after the span is kept.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::markup::{AnnotatedDocument, Segment};
use crate::metrics::OUTSIDE;
use crate::taxonomy::{unknown_labels, Taxonomy};

pub const POLICY_HEADER: &str = "#deid-policy v1";

const SHIPPED_POLICY: &str = include_str!("../data/policy.default");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnonymizeError {
    #[error("spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: Range<usize>,
        second: Range<usize>,
    },
    #[error("span {span:?} lies outside the {len}-byte text or splits a character")]
    OutOfBounds { span: Range<usize>, len: usize },
    #[error("no policy action for labels: {}", .0.join(", "))]
    UnknownLabel(Vec<String>),
    #[error("{0} labels and {1} offsets")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or unsupported header, expected {POLICY_HEADER:?}")]
    Header,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("labels not in the taxonomy: {}", .0.join(", "))]
    UnknownLabel(Vec<String>),
    #[error("no action for labels: {}", .0.join(", "))]
    MissingLabels(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Letter,
    /// `"{noun} {n}"`, followed by `" {suffix}"` when a suffix is set.
    Omission {
        noun: String,
        suffix: Option<String>,
    },
    Descriptor {
        descriptor: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizationPolicy {
    actions: BTreeMap<String, Action>,
    pub adjust_particles: bool,
}

/// Subcategories whose labels name a kind of place or business.
const DESCRIPTOR_SUBCATEGORIES: &[&str] = &["기관 및 시설", "사업체"];

impl AnonymizationPolicy {
    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self, PolicyError> {
        Self::parse(SHIPPED_POLICY, taxonomy)
    }

    /// Rule-derived default: numeric direct identifiers are omitted, labels
    /// naming places or businesses keep their generic noun, the rest get letters.
    pub fn default_for(taxonomy: &Taxonomy) -> Self {
        let omit = |noun: &str, suffix: Option<&str>| Action::Omission {
            noun: noun.to_string(),
            suffix: suffix.map(str::to_string),
        };
        let mut actions = BTreeMap::new();
        for main in taxonomy.main_categories() {
            for sub in &main.children {
                for gran in &sub.children {
                    for l in &gran.labels {
                        let label = l.label.as_str();
                        let action = match label {
                            "주민등록번호" => omit("주민등록번호", None),
                            "계좌번호" | "전화번호" | "이메일주소" => {
                                omit(label, Some("생략"))
                            }
                            "URL" => omit("URL", Some("생략")),
                            "연령정보" => omit("생년월일", Some("생략")),
                            _ if DESCRIPTOR_SUBCATEGORIES.contains(&sub.name.as_str()) => {
                                Action::Descriptor {
                                    descriptor: label.to_string(),
                                }
                            }
                            _ => Action::Letter,
                        };
                        actions.insert(label.to_string(), action);
                    }
                }
            }
        }
        AnonymizationPolicy {
            actions,
            adjust_particles: true,
        }
    }

    pub fn action(&self, label: &str) -> Option<&Action> {
        self.actions.get(label)
    }

    pub fn set_action(&mut self, label: &str, action: Action) {
        self.actions.insert(label.to_string(), action);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, taxonomy)
    }

    /// Parses `label<TAB>letter`, `label<TAB>omit<TAB>noun[<TAB>suffix]` and
    /// `label<TAB>descriptor<TAB>noun` lines. Every taxonomy label needs one.
    pub fn parse(text: &str, taxonomy: &Taxonomy) -> Result<Self, PolicyError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == POLICY_HEADER => {}
            _ => return Err(PolicyError::Header),
        }
        let mut actions = BTreeMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| PolicyError::Parse {
                line: line_no,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            let nonempty = |s: Option<&&str>, what: &str| match s {
                Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
                _ => Err(err(format!("{what} must be non-empty"))),
            };
            let action = match (f.get(1).copied(), f.len()) {
                (Some("letter"), 2) => Action::Letter,
                (Some("omit"), 3 | 4) => Action::Omission {
                    noun: nonempty(f.get(2), "omission noun")?,
                    suffix: f.get(3).map(|s| s.to_string()).filter(|s| !s.is_empty()),
                },
                (Some("descriptor"), 3) => Action::Descriptor {
                    descriptor: nonempty(f.get(2), "descriptor")?,
                },
                _ => return Err(err(format!("unrecognized action line {line:?}"))),
            };
            if actions.insert(f[0].to_string(), action).is_some() {
                return Err(err(format!("second action for label {}", f[0])));
            }
        }
        let unknown = unknown_labels(taxonomy, actions.keys().map(String::as_str));
        if !unknown.is_empty() {
            return Err(PolicyError::UnknownLabel(unknown));
        }
        let missing: Vec<String> = taxonomy
            .labels()
            .filter(|l| !actions.contains_key(*l))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(PolicyError::MissingLabels(missing));
        }
        Ok(AnonymizationPolicy {
            actions,
            adjust_particles: true,
        })
    }

    /// Canonical file form, labels in taxonomy order.
    pub fn serialize(&self, taxonomy: &Taxonomy) -> String {
        let mut out = format!("{POLICY_HEADER}\n");
        let ordered = taxonomy
            .labels()
            .filter(|l| self.actions.contains_key(*l))
            .chain(
                self.actions
                    .keys()
                    .map(String::as_str)
                    .filter(|l| !taxonomy.contains(l)),
            );
        for label in ordered {
            let _ = match &self.actions[label] {
                Action::Letter => writeln!(out, "{label}\tletter"),
                Action::Omission { noun, suffix: None } => writeln!(out, "{label}\tomit\t{noun}"),
                Action::Omission {
                    noun,
                    suffix: Some(s),
                } => writeln!(out, "{label}\tomit\t{noun}\t{s}"),
                Action::Descriptor { descriptor } => {
                    writeln!(out, "{label}\tdescriptor\t{descriptor}")
                }
            };
        }
        out
    }
}

/// Bijective base-26 over A..Z: 1 → A, 26 → Z, 27 → AA, 52 → AZ.
pub fn placeholder(n: usize) -> String {
    assert!(n >= 1, "placeholders are numbered from 1");
    let mut n = n;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ASCII")
}

/// Yields A, B, C, ...
#[derive(Debug, Clone, Default)]
pub struct PlaceholderSequence {
    drawn: usize,
}

impl PlaceholderSequence {
    pub fn next_placeholder(&mut self) -> String {
        self.drawn += 1;
        placeholder(self.drawn)
    }
}

impl Iterator for PlaceholderSequence {
    type Item = String;
    fn next(&mut self) -> Option<String> {
        Some(self.next_placeholder())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledSpan {
    pub range: Range<usize>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub surface: String,
    pub label: String,
    pub placeholder: String,
    /// Byte range of the placeholder in the output text.
    pub output_range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnonymizedDocument {
    pub text: String,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Final {
    Vowel,
    Rieul,
    Consonant,
}

/// Final sound of a character as read aloud in Korean.
fn final_sound(c: char) -> Final {
    match c {
        '가'..='힣' => match (c as u32 - 0xAC00) % 28 {
            0 => Final::Vowel,
            8 => Final::Rieul,
            _ => Final::Consonant,
        },
        'L' | 'R' | 'l' | 'r' | '1' | '7' | '8' => Final::Rieul,
        'M' | 'N' | 'm' | 'n' | '0' | '3' | '6' => Final::Consonant,
        _ => Final::Vowel,
    }
}

/// (after a consonant, after a vowel); longest forms first.
const PARTICLES: &[(&str, &str)] = &[
    ("으로", "로"),
    ("이나", "나"),
    ("이랑", "랑"),
    ("은", "는"),
    ("이", "가"),
    ("을", "를"),
    ("과", "와"),
];

fn is_hangul(c: char) -> bool {
    matches!(c, '가'..='힣' | 'ㄱ'..='ㆎ' | '\u{1100}'..='\u{11FF}')
}

/// If `rest` starts with a particle standing alone, returns its length and
/// the form that agrees with `last`.
fn particle_fix(last: char, rest: &str) -> Option<(usize, &'static str)> {
    let sound = final_sound(last);
    for &(cons, vowel) in PARTICLES {
        for form in [cons, vowel] {
            if let Some(after) = rest.strip_prefix(form) {
                if after.chars().next().is_some_and(is_hangul) {
                    continue;
                }
                let want = match (cons, sound) {
                    ("으로", Final::Rieul) => vowel,
                    (_, Final::Vowel) => vowel,
                    _ => cons,
                };
                return Some((form.len(), want));
            }
        }
    }
    None
}

/// Replaces each span according to `policy`. Coreferent spans (same surface
/// and label) share a placeholder.
pub fn anonymize(
    text: &str,
    spans: &[LabeledSpan],
    policy: &AnonymizationPolicy,
) -> Result<AnonymizedDocument, AnonymizeError> {
    let mut order: Vec<&LabeledSpan> = spans.iter().collect();
    order.sort_by_key(|s| (s.range.start, s.range.end));
    for s in &order {
        if s.range.start >= s.range.end
            || s.range.end > text.len()
            || !text.is_char_boundary(s.range.start)
            || !text.is_char_boundary(s.range.end)
        {
            return Err(AnonymizeError::OutOfBounds {
                span: s.range.clone(),
                len: text.len(),
            });
        }
    }
    for w in order.windows(2) {
        if w[1].range.start < w[0].range.end {
            return Err(AnonymizeError::OverlappingSpans {
                first: w[0].range.clone(),
                second: w[1].range.clone(),
            });
        }
    }
    let mut missing: Vec<String> = order
        .iter()
        .filter(|s| policy.action(&s.label).is_none())
        .map(|s| s.label.clone())
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(AnonymizeError::UnknownLabel(missing));
    }

    let mut letters = PlaceholderSequence::default();
    let mut omission_counts: HashMap<&str, usize> = HashMap::new();
    let mut assigned: HashMap<(&str, &str), String> = HashMap::new();
    let mut out = String::with_capacity(text.len());
    let mut ledger = Vec::new();
    let mut pos = 0;
    for s in order {
        out.push_str(&text[pos..s.range.start]);
        let surface = &text[s.range.clone()];
        let action = policy.action(&s.label).expect("checked");
        let key = (surface, s.label.as_str());
        let emitted = match assigned.get(&key) {
            Some(p) => p.clone(),
            None => {
                let p = match action {
                    Action::Letter | Action::Descriptor { .. } => letters.next_placeholder(),
                    Action::Omission { noun, suffix } => {
                        let n = omission_counts.entry(noun.as_str()).or_default();
                        *n += 1;
                        match suffix {
                            Some(sfx) => format!("{noun} {n} {sfx}"),
                            None => format!("{noun} {n}"),
                        }
                    }
                };
                assigned.insert(key, p.clone());
                p
            }
        };
        let start = out.len();
        out.push_str(&emitted);
        ledger.push(LedgerEntry {
            surface: surface.to_string(),
            label: s.label.clone(),
            placeholder: emitted.clone(),
            output_range: start..out.len(),
        });
        pos = s.range.end;

        let rest = &text[pos..];
        if let Action::Descriptor { descriptor } = action {
            if !rest.trim_start().starts_with(descriptor.as_str()) {
                out.push(' ');
                out.push_str(descriptor);
            }
            continue;
        }
        if policy.adjust_particles {
            let last = emitted.chars().last().expect("non-empty placeholder");
            if let Some((len, form)) = particle_fix(last, rest) {
                out.push_str(form);
                pos += len;
            }
        }
    }
    out.push_str(&text[pos..]);
    Ok(AnonymizedDocument { text: out, ledger })
}

/// Merges maximal runs of one non-outside label into byte ranges.
pub fn tagged_tokens_to_spans<S: AsRef<str>>(
    y_pred: &[S],
    offsets: &[(usize, usize)],
) -> Result<Vec<LabeledSpan>, AnonymizeError> {
    if y_pred.len() != offsets.len() {
        return Err(AnonymizeError::LengthMismatch(y_pred.len(), offsets.len()));
    }
    let mut out: Vec<LabeledSpan> = Vec::new();
    let mut prev: Option<&str> = None;
    for (label, &(a, b)) in y_pred.iter().map(AsRef::as_ref).zip(offsets) {
        if label == OUTSIDE {
            prev = None;
            continue;
        }
        match out.last_mut() {
            Some(last) if prev == Some(label) => last.range.end = b,
            _ => out.push(LabeledSpan {
                range: a..b,
                label: label.to_string(),
            }),
        }
        prev = Some(label);
    }
    Ok(out)
}

/// Plain text of a marked-up document plus the spans of its entities. The
/// entity text stands for the original surface.
pub fn document_spans(doc: &AnnotatedDocument) -> (String, Vec<LabeledSpan>) {
    let mut text = String::new();
    let mut spans = Vec::new();
    for seg in &doc.segments {
        match seg {
            Segment::Plain(t) => text.push_str(t),
            Segment::Entity { label, placeholder } => {
                let start = text.len();
                text.push_str(placeholder);
                spans.push(LabeledSpan {
                    range: start..text.len(),
                    label: label.clone(),
                });
            }
        }
    }
    (text, spans)
}
