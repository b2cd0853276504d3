//! Dictionary lattice segmentation.
//!
//! Text splits into whitespace runs and non-whitespace units. Each unit is
//! segmented by a minimum-cost path over dictionary matches plus single-char
//! out-of-vocabulary edges. Ties prefer the longest first edge. Adjacent OOV
//! characters merge into one chunk, except punctuation, which always stands
//! alone.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DICT_HEADER: &str = "#deid-morph-dict v1";

/// Cost of one OOV character; large enough that any dictionary path wins.
pub const OOV_CHAR_COST: i64 = 10_000;

const SHIPPED_DICT: &str = include_str!("../../data/morph.dict");

#[derive(Debug, Error)]
pub enum DictError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or unsupported header, expected {DICT_HEADER:?}")]
    Header,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MorphEntry {
    pub surface: String,
    pub pos: String,
    pub cost: i64,
}

impl MorphEntry {
    pub fn is_noun(&self) -> bool {
        self.pos.starts_with("NN")
    }

    pub fn is_particle(&self) -> bool {
        self.pos.starts_with('J')
    }
}

#[derive(Debug, Clone, Default)]
pub struct MorphDict {
    entries: Vec<MorphEntry>,
    /// Surface to the index of its cheapest entry (ties: smallest POS).
    best: HashMap<String, usize>,
    max_chars: usize,
}

impl MorphDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_DICT).expect("shipped dictionary parses")
    }

    pub fn from_entries(entries: impl IntoIterator<Item = MorphEntry>) -> Self {
        let mut d = Self::new();
        for e in entries {
            d.insert(e);
        }
        d
    }

    /// Adds an entry. Surfaces are NFC-normalized; exact duplicates are dropped.
    pub fn insert(&mut self, mut entry: MorphEntry) {
        entry.surface = entry.surface.nfc().collect();
        if self.entries.contains(&entry) {
            return;
        }
        let idx = self.entries.len();
        self.max_chars = self.max_chars.max(entry.surface.chars().count());
        match self.best.get(&entry.surface) {
            Some(&cur) => {
                let c = &self.entries[cur];
                if (entry.cost, &entry.pos) < (c.cost, &c.pos) {
                    self.best.insert(entry.surface.clone(), idx);
                }
            }
            None => {
                self.best.insert(entry.surface.clone(), idx);
            }
        }
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[MorphEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<&MorphEntry> {
        self.best.get(surface).map(|&i| &self.entries[i])
    }

    pub fn nouns(&self) -> impl Iterator<Item = &MorphEntry> {
        self.entries.iter().filter(|e| e.is_noun())
    }

    pub fn particles(&self) -> impl Iterator<Item = &MorphEntry> {
        self.entries.iter().filter(|e| e.is_particle())
    }

    /// Distinct surfaces in first-insertion order.
    pub fn surfaces(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.surface.as_str()))
            .map(|e| e.surface.as_str())
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DictError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DictError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `surface<TAB>POS<TAB>cost` lines after the format header.
    pub fn parse(text: &str) -> Result<Self, DictError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == DICT_HEADER => {}
            _ => return Err(DictError::Header),
        }
        let mut dict = Self::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(DictError::Parse {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            dict.insert(parse_entry(fields[0], fields[1], fields[2], line_no)?);
        }
        Ok(dict)
    }

    /// Imports a comma-separated external dictionary whose rows start with
    /// `surface,left_id,right_id,cost,POS`. Further columns are ignored.
    pub fn import_csv(path: impl AsRef<Path>) -> Result<Self, DictError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DictError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut dict = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 5 {
                return Err(DictError::Parse {
                    line: i + 1,
                    message: "expected at least 5 comma-separated fields".into(),
                });
            }
            dict.insert(parse_entry(fields[0], fields[4], fields[3], i + 1)?);
        }
        Ok(dict)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("{DICT_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.surface, e.pos, e.cost));
        }
        out
    }

    fn matches_at(
        &self,
        chars: &[(usize, char)],
        text: &str,
        i: usize,
    ) -> Vec<(usize, &MorphEntry)> {
        let mut out = Vec::new();
        let start = chars[i].0;
        for len in 1..=self.max_chars.min(chars.len() - i) {
            let end = chars.get(i + len).map_or(text.len(), |c| c.0);
            if let Some(e) = self.lookup(&text[start..end]) {
                out.push((len, e));
            }
        }
        out
    }
}

fn parse_entry(surface: &str, pos: &str, cost: &str, line: usize) -> Result<MorphEntry, DictError> {
    let err = |message: String| DictError::Parse { line, message };
    if surface.is_empty() || surface.chars().any(char::is_whitespace) {
        return Err(err(format!("invalid surface {surface:?}")));
    }
    if pos.is_empty() || pos.chars().any(char::is_whitespace) {
        return Err(err(format!("invalid part-of-speech tag {pos:?}")));
    }
    let cost = cost
        .trim()
        .parse::<i64>()
        .map_err(|_| err(format!("invalid cost {cost:?}")))?;
    Ok(MorphEntry {
        surface: surface.to_string(),
        pos: pos.to_string(),
        cost,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MorphKind {
    Dict { pos: String },
    Oov,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Morpheme<'a> {
    pub text: &'a str,
    /// Byte offset into the segmented text.
    pub start: usize,
    pub kind: MorphKind,
}

impl Morpheme<'_> {
    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }

    pub fn is_oov(&self) -> bool {
        self.kind == MorphKind::Oov
    }
}

pub fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Segments `text` as-is; callers normalize first.
pub fn segment_morphemes<'a>(text: &'a str, dict: &MorphDict) -> Vec<Morpheme<'a>> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(c) = rest.chars().next() {
        let ws = c.is_whitespace();
        let len = rest
            .char_indices()
            .find(|(_, ch)| ch.is_whitespace() != ws)
            .map_or(rest.len(), |(i, _)| i);
        let run = &rest[..len];
        if ws {
            out.push(Morpheme {
                text: run,
                start: offset,
                kind: MorphKind::Whitespace,
            });
        } else {
            segment_unit(run, offset, dict, &mut out);
        }
        offset += len;
        rest = &rest[len..];
    }
    out
}

enum Edge<'d> {
    Dict(&'d MorphEntry),
    Oov,
}

fn segment_unit<'a>(unit: &'a str, offset: usize, dict: &MorphDict, out: &mut Vec<Morpheme<'a>>) {
    let chars: Vec<(usize, char)> = unit.char_indices().collect();
    let n = chars.len();
    // best[i]: cost of the optimal path from char i to the end, with its first edge.
    let mut best: Vec<(i64, usize, Option<Edge>)> = (0..=n).map(|_| (0, 0, None)).collect();
    for i in (0..n).rev() {
        let mut choice = (OOV_CHAR_COST + best[i + 1].0, 1, Edge::Oov);
        for (len, e) in dict.matches_at(&chars, unit, i) {
            let cost = e.cost + best[i + len].0;
            if cost < choice.0 || (cost == choice.0 && len > choice.1) {
                choice = (cost, len, Edge::Dict(e));
            }
        }
        best[i] = (choice.0, choice.1, Some(choice.2));
    }

    let byte = |i: usize| chars.get(i).map_or(unit.len(), |c| c.0);
    let mut oov_start: Option<usize> = None;
    let flush = |from: Option<usize>, to: usize, out: &mut Vec<Morpheme<'a>>| {
        if let Some(s) = from {
            out.push(Morpheme {
                text: &unit[byte(s)..byte(to)],
                start: offset + byte(s),
                kind: MorphKind::Oov,
            });
        }
    };
    let mut i = 0;
    while i < n {
        let (_, len, edge) = &best[i];
        match edge.as_ref().expect("filled") {
            Edge::Oov if is_punctuation(chars[i].1) => {
                flush(oov_start.take(), i, out);
                flush(Some(i), i + 1, out);
            }
            Edge::Oov => {
                oov_start.get_or_insert(i);
            }
            Edge::Dict(e) => {
                flush(oov_start.take(), i, out);
                out.push(Morpheme {
                    text: &unit[byte(i)..byte(i + len)],
                    start: offset + byte(i),
                    kind: MorphKind::Dict { pos: e.pos.clone() },
                });
            }
        }
        i += len;
    }
    flush(oov_start, n, out);
}
