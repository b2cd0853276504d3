//! Hybrid tokenizer: morpheme lattice first, BPE over the leftovers.
//!
//! ID layout: bytes `<0x00>`..`<0xFF>` take IDs 0..256, regular tokens
//! (dictionary surfaces, BPE alphabet, merge results) follow, and the marker
//! block starts right after the last regular token. Label `i` in taxonomy
//! order owns start ID `base + 2i` and end ID `base + 2i + 1`.

pub mod bpe;
pub mod morph;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use bpe::{train_bpe, BpeError, BpeModel};
pub use morph::{segment_morphemes, DictError, MorphDict, MorphEntry, MorphKind, Morpheme};

use crate::keying::sha256_hex;
use crate::markup::{end_marker, match_marker, start_marker, MarkerKind, Segment};
use crate::taxonomy::Taxonomy;
use crate::AnnotatedDocument;

pub const DEFAULT_VOCAB_SIZE: usize = 32_000;
pub const BYTE_TOKENS: u32 = 256;
pub const VOCAB_HEADER: &str = "#deid-vocab v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("byte tokens do not form valid UTF-8")]
    InvalidByteSequence,
    #[error("no marker tokens for label {0}")]
    UnknownLabel(String),
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Artifact { file: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialToken<'a> {
    pub label: &'a str,
    pub kind: MarkerKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Byte ranges into the normalized text.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    dict: MorphDict,
    /// Regular token strings; index + 256 is the ID.
    regular: Vec<String>,
    regular_ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
    /// Labels in marker-block order.
    marker_labels: Vec<String>,
    marker_ids: HashMap<String, u32>,
}

pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

impl Vocabulary {
    /// Assembles a vocabulary from a dictionary, a BPE model and the label set.
    pub fn build(dict: MorphDict, model: &BpeModel, taxonomy: &Taxonomy) -> Self {
        let labels: Vec<String> = taxonomy.labels().map(str::to_string).collect();
        let mut regular = Vec::new();
        let mut seen = HashSet::new();
        let mut push = |s: &str, regular: &mut Vec<String>| {
            if seen.insert(s.to_string()) {
                regular.push(s.to_string());
            }
        };
        for s in dict.surfaces() {
            push(s, &mut regular);
        }
        for s in &model.alphabet {
            push(s, &mut regular);
        }
        for (l, r) in &model.merges {
            push(&format!("{l}{r}"), &mut regular);
        }
        Self::assemble(dict, regular, model.merges.clone(), labels)
            .expect("built vocabulary is consistent")
    }

    /// Trains BPE on the leftovers of dictionary segmentation over `lines`.
    /// Marker strings are dropped before segmentation.
    pub fn train<'a, I>(
        lines: I,
        dict: MorphDict,
        taxonomy: &Taxonomy,
        vocab_size: usize,
    ) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut chunks: Vec<String> = Vec::new();
        for line in lines {
            let text = normalize(line);
            for piece in split_markers(&text, |_| true) {
                if let Piece::Text(t) = piece {
                    for m in segment_morphemes(t, &dict) {
                        if !matches!(m.kind, MorphKind::Dict { .. }) {
                            chunks.push(m.text.to_string());
                        }
                    }
                }
            }
        }
        if chunks.is_empty() {
            return Err(BpeError::CorpusEmpty.into());
        }
        let model = train_bpe(chunks.iter().map(String::as_str), vocab_size)?;
        Ok(Self::build(dict, &model, taxonomy))
    }

    fn assemble(
        dict: MorphDict,
        regular: Vec<String>,
        merges: Vec<(String, String)>,
        marker_labels: Vec<String>,
    ) -> Result<Self, String> {
        let mut regular_ids = HashMap::new();
        for (i, s) in regular.iter().enumerate() {
            if s.is_empty() {
                return Err(format!(
                    "empty regular token at id {}",
                    i as u32 + BYTE_TOKENS
                ));
            }
            if regular_ids
                .insert(s.clone(), i as u32 + BYTE_TOKENS)
                .is_some()
            {
                return Err(format!("duplicate regular token {s:?}"));
            }
        }
        let mut merge_ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let get = |s: &str| {
                regular_ids
                    .get(s)
                    .copied()
                    .ok_or_else(|| format!("merge symbol {s:?} is not a token"))
            };
            let key = (get(l)?, get(r)?);
            let merged = get(&format!("{l}{r}"))?;
            merge_ranks.entry(key).or_insert((rank, merged));
        }
        for s in dict.surfaces() {
            if !regular_ids.contains_key(s) {
                return Err(format!("dictionary surface {s:?} has no token"));
            }
        }
        let base = BYTE_TOKENS + regular.len() as u32;
        let mut marker_ids = HashMap::new();
        for (i, label) in marker_labels.iter().enumerate() {
            let start = base + 2 * i as u32;
            marker_ids.insert(start_marker(label), start);
            marker_ids.insert(end_marker(label), start + 1);
        }
        if marker_ids.len() != 2 * marker_labels.len() {
            return Err("duplicate marker label".into());
        }
        Ok(Vocabulary {
            dict,
            regular,
            regular_ids,
            merges,
            merge_ranks,
            marker_labels,
            marker_ids,
        })
    }

    pub fn dict(&self) -> &MorphDict {
        &self.dict
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// First ID of the marker block.
    pub fn special_base(&self) -> u32 {
        BYTE_TOKENS + self.regular.len() as u32
    }

    pub fn special_count(&self) -> usize {
        2 * self.marker_labels.len()
    }

    pub fn len(&self) -> usize {
        self.special_base() as usize + self.special_count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn marker_labels(&self) -> &[String] {
        &self.marker_labels
    }

    pub fn is_special(&self, id: u32) -> bool {
        id >= self.special_base() && (id as usize) < self.len()
    }

    pub fn special(&self, id: u32) -> Option<SpecialToken<'_>> {
        if !self.is_special(id) {
            return None;
        }
        let k = (id - self.special_base()) as usize;
        Some(SpecialToken {
            label: &self.marker_labels[k / 2],
            kind: if k.is_multiple_of(2) {
                MarkerKind::Start
            } else {
                MarkerKind::End
            },
        })
    }

    /// `(start, end)` marker IDs for a label.
    pub fn marker_ids(&self, label: &str) -> Option<(u32, u32)> {
        let s = *self.marker_ids.get(&start_marker(label))?;
        Some((s, s + 1))
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.regular_ids.get(token).copied()
    }

    /// Surface form of a token; byte tokens render as `<0xNN>`.
    pub fn token_str(&self, id: u32) -> Option<String> {
        if id < BYTE_TOKENS {
            Some(format!("<0x{id:02X}>"))
        } else if let Some(s) = self.regular.get((id - BYTE_TOKENS) as usize) {
            Some(s.clone())
        } else {
            self.special(id).map(|s| match s.kind {
                MarkerKind::Start => start_marker(s.label),
                MarkerKind::End => end_marker(s.label),
            })
        }
    }

    /// Normalizes, maps known marker strings to their reserved IDs, and
    /// tokenizes the rest.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let text = normalize(text);
        let mut seq = TokenSequence::default();
        let mut offset = 0;
        for piece in split_markers(&text, |m| self.marker_ids.contains_key(m)) {
            match piece {
                Piece::Marker(m) => {
                    seq.ids.push(self.marker_ids[m]);
                    seq.offsets.push((offset, offset + m.len()));
                    offset += m.len();
                }
                Piece::Text(t) => {
                    self.encode_plain_into(t, offset, &mut seq);
                    offset += t.len();
                }
            }
        }
        seq
    }

    /// Tokenizes normalized text without marker detection.
    fn encode_plain_into(&self, text: &str, offset: usize, seq: &mut TokenSequence) {
        for m in segment_morphemes(text, &self.dict) {
            let start = offset + m.start;
            match m.kind {
                MorphKind::Dict { .. } => {
                    seq.ids.push(self.regular_ids[m.text]);
                    seq.offsets.push((start, start + m.text.len()));
                }
                MorphKind::Oov | MorphKind::Whitespace => self.encode_chunk(m.text, start, seq),
            }
        }
    }

    fn encode_chunk(&self, chunk: &str, start: usize, seq: &mut TokenSequence) {
        // Runs of in-alphabet characters go through BPE; others fall back to bytes.
        let mut run: Vec<u32> = Vec::new();
        let mut run_offsets: Vec<(usize, usize)> = Vec::new();
        let mut buf = [0u8; 4];
        for (i, c) in chunk.char_indices() {
            let s = c.encode_utf8(&mut buf);
            let at = start + i;
            match self.regular_ids.get(&*s) {
                Some(&id) => {
                    run.push(id);
                    run_offsets.push((at, at + s.len()));
                }
                None => {
                    self.flush_run(&mut run, &mut run_offsets, seq);
                    for (k, b) in s.bytes().enumerate() {
                        seq.ids.push(u32::from(b));
                        seq.offsets.push((at + k, at + k + 1));
                    }
                }
            }
        }
        self.flush_run(&mut run, &mut run_offsets, seq);
    }

    fn flush_run(
        &self,
        run: &mut Vec<u32>,
        offsets: &mut Vec<(usize, usize)>,
        seq: &mut TokenSequence,
    ) {
        if run.is_empty() {
            return;
        }
        let Some(&(mut pos, _)) = offsets.first() else {
            return;
        };
        bpe::apply_merges(run, &self.merge_ranks);
        for &id in run.iter() {
            let len = self.regular[(id - BYTE_TOKENS) as usize].len();
            seq.ids.push(id);
            seq.offsets.push((pos, pos + len));
            pos += len;
        }
        run.clear();
        offsets.clear();
    }

    /// Inverse of [`encode`](Self::encode) on normalized text.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut bytes: Vec<u8> = Vec::new();
        for &id in ids {
            if id < BYTE_TOKENS {
                bytes.push(id as u8);
                continue;
            }
            if !bytes.is_empty() {
                out.push_str(
                    std::str::from_utf8(&bytes).map_err(|_| TokenizerError::InvalidByteSequence)?,
                );
                bytes.clear();
            }
            match self.token_str(id) {
                Some(s) => out.push_str(&s),
                None => return Err(TokenizerError::UnknownId(id)),
            }
        }
        if !bytes.is_empty() {
            out.push_str(
                std::str::from_utf8(&bytes).map_err(|_| TokenizerError::InvalidByteSequence)?,
            );
        }
        Ok(out)
    }

    /// Encodes a parsed document segment by segment: plain text never yields
    /// marker IDs, entities yield start, placeholder tokens, end.
    pub fn encode_document(&self, doc: &AnnotatedDocument) -> Result<Vec<u32>, TokenizerError> {
        let mut seq = TokenSequence::default();
        for seg in &doc.segments {
            match seg {
                Segment::Plain(t) => self.encode_plain_into(&normalize(t), 0, &mut seq),
                Segment::Entity { label, placeholder } => {
                    let (s, e) = self
                        .marker_ids(label)
                        .ok_or_else(|| TokenizerError::UnknownLabel(label.clone()))?;
                    seq.ids.push(s);
                    self.encode_plain_into(&normalize(placeholder), 0, &mut seq);
                    seq.ids.push(e);
                }
            }
        }
        Ok(seq.ids)
    }

    /// Encodes text that must not be scanned for markers, such as a mention.
    pub fn encode_plain(&self, text: &str) -> Vec<u32> {
        let mut seq = TokenSequence::default();
        self.encode_plain_into(&normalize(text), 0, &mut seq);
        seq.ids
    }

    /// True when the marker block lists exactly the taxonomy's labels in order.
    pub fn matches_taxonomy(&self, taxonomy: &Taxonomy) -> bool {
        self.marker_labels.len() == taxonomy.len()
            && self
                .marker_labels
                .iter()
                .zip(taxonomy.labels())
                .all(|(a, b)| a == b)
    }

    pub fn content_hash(&self) -> String {
        let mut all = String::new();
        for (_, body) in self.artifact_files() {
            all.push_str(&body);
        }
        sha256_hex(all.as_bytes())
    }

    fn artifact_files(&self) -> Vec<(&'static str, String)> {
        let mut tokens = format!("{VOCAB_HEADER} tokens\n");
        for b in 0..BYTE_TOKENS {
            let _ = writeln!(tokens, "{b}\tbyte\t<0x{b:02X}>");
        }
        for (i, s) in self.regular.iter().enumerate() {
            let _ = writeln!(tokens, "{}\tregular\t{}", i as u32 + BYTE_TOKENS, escape(s));
        }
        let mut specials = format!("{VOCAB_HEADER} specials\n");
        for id in self.special_base()..self.len() as u32 {
            let _ = writeln!(specials, "{id}\t{}", self.token_str(id).expect("special"));
        }
        let mut merges = format!("{VOCAB_HEADER} merges\n");
        for (l, r) in &self.merges {
            let _ = writeln!(merges, "{}\t{}", escape(l), escape(r));
        }
        vec![
            ("tokens.tsv", tokens),
            ("specials.tsv", specials),
            ("merges.txt", merges),
            ("dict.tsv", self.dict.serialize()),
        ]
    }

    /// Writes `tokens.tsv`, `specials.tsv`, `merges.txt` and `dict.tsv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| TokenizerError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, body) in self.artifact_files() {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| TokenizerError::Io { path, source })?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| TokenizerError::Io { path, source })
        };
        let dict = MorphDict::parse(&read("dict.tsv")?)?;

        let artifact = |file: &str, message: String| TokenizerError::Artifact {
            file: file.to_string(),
            message,
        };
        let body =
            |file: &'static str, text: &str, kind: &str| -> Result<Vec<String>, TokenizerError> {
                let mut lines = text.lines();
                if lines.next() != Some(&format!("{VOCAB_HEADER} {kind}")) {
                    return Err(artifact(file, "missing or unsupported header".into()));
                }
                Ok(lines
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect())
            };

        let mut regular = Vec::new();
        for (n, line) in body("tokens.tsv", &read("tokens.tsv")?, "tokens")?
            .iter()
            .enumerate()
        {
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            let bad = |m: &str| artifact("tokens.tsv", format!("line {}: {m}", n + 2));
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(n) {
                return Err(bad("ids must be dense and start at 0"));
            }
            match (f[1], n < BYTE_TOKENS as usize) {
                ("byte", true) if f[2] == format!("<0x{n:02X}>") => {}
                ("regular", false) => {
                    regular.push(unescape(f[2]).ok_or_else(|| bad("bad escape"))?)
                }
                _ => return Err(bad("unexpected token kind")),
            }
        }
        let base = BYTE_TOKENS as usize + regular.len();

        let mut labels = Vec::new();
        for (n, line) in body("specials.tsv", &read("specials.tsv")?, "specials")?
            .iter()
            .enumerate()
        {
            let bad = |m: &str| artifact("specials.tsv", format!("line {}: {m}", n + 2));
            let (id, marker) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected id and marker"))?;
            if id.parse::<usize>().ok() != Some(base + n) {
                return Err(bad("special ids must follow the regular tokens densely"));
            }
            let m = match_marker(marker)
                .filter(|m| m.len == marker.len())
                .ok_or_else(|| bad("not a marker"))?;
            let expected = if n % 2 == 0 {
                MarkerKind::Start
            } else {
                MarkerKind::End
            };
            if m.kind != expected || (n % 2 == 1 && labels.last() != Some(&m.label.to_string())) {
                return Err(bad("markers must alternate start and end per label"));
            }
            if n % 2 == 0 {
                labels.push(m.label.to_string());
            }
        }

        let mut merges = Vec::new();
        for (n, line) in body("merges.txt", &read("merges.txt")?, "merges")?
            .iter()
            .enumerate()
        {
            let bad = |m: &str| artifact("merges.txt", format!("line {}: {m}", n + 2));
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected two symbols"))?;
            merges.push((
                unescape(l).ok_or_else(|| bad("bad escape"))?,
                unescape(r).ok_or_else(|| bad("bad escape"))?,
            ));
        }
        Self::assemble(dict, regular, merges, labels).map_err(|m| artifact("vocabulary", m))
    }
}

enum Piece<'a> {
    Text(&'a str),
    Marker(&'a str),
}

/// Splits out syntactic markers accepted by `keep`.
fn split_markers<'a>(text: &'a str, keep: impl Fn(&str) -> bool) -> Vec<Piece<'a>> {
    let mut out = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while let Some(rel) = text[i..].find("<<<") {
        let at = i + rel;
        match match_marker(&text[at..]) {
            Some(m) if keep(&text[at..at + m.len]) => {
                if plain_start < at {
                    out.push(Piece::Text(&text[plain_start..at]));
                }
                out.push(Piece::Marker(&text[at..at + m.len]));
                i = at + m.len;
                plain_start = i;
            }
            _ => i = at + 1,
        }
    }
    if plain_start < text.len() {
        out.push(Piece::Text(&text[plain_start..]));
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(match chars.next()? {
                '\\' => '\\',
                's' => ' ',
                't' => '\t',
                'n' => '\n',
                'r' => '\r',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}
