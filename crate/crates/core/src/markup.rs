//! Annotated-judgment markup.
//!
//! Placeholders are wrapped in `<<<LABEL>>>` … `<<</LABEL>>>`. In plain text
//! a backslash escapes a following `<` or `\`; any other backslash is literal.
//! The serializer emits the minimal escaping needed for a lossless re-parse,
//! so documents without backslashes or stray `<<<` serialize back to exactly
//! the bytes they were parsed from.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{validate_label, Taxonomy};

pub const OPEN: &str = "<<<";
pub const CLOSE: &str = ">>>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarkupError {
    #[error("unbalanced {kind} marker at byte {offset}")]
    UnbalancedMarker { offset: usize, kind: MarkerKind },
    #[error("marker opened at byte {outer} contains another marker at byte {inner}")]
    NestedMarker { outer: usize, inner: usize },
    #[error("start marker {start:?} at byte {offset} is closed by {end:?}")]
    MismatchedMarker {
        offset: usize,
        start: String,
        end: String,
    },
    #[error("malformed marker at byte {offset}: {message}")]
    MalformedMarker { offset: usize, message: String },
    #[error("unknown label {label:?} at byte {offset}")]
    UnknownLabel { offset: usize, label: String },
    #[error("empty placeholder for label {label:?} at byte {offset}")]
    EmptyPlaceholder { offset: usize, label: String },
    #[error("placeholder {placeholder:?} at byte {offset} contains a marker delimiter")]
    InvalidPlaceholder { offset: usize, placeholder: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Start,
    End,
}

impl std::fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarkerKind::Start => "start",
            MarkerKind::End => "end",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Plain(String),
    Entity { label: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan<'a> {
    /// Position of the entity among all segments.
    pub index: usize,
    pub label: &'a str,
    pub placeholder: &'a str,
}

pub fn start_marker(label: &str) -> String {
    format!("{OPEN}{label}{CLOSE}")
}

pub fn end_marker(label: &str) -> String {
    format!("{OPEN}/{label}{CLOSE}")
}

/// A syntactically well-formed marker found in text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerMatch<'a> {
    pub kind: MarkerKind,
    pub label: &'a str,
    /// Byte length of the whole marker.
    pub len: usize,
}

/// Recognize a marker at the start of `text`, if any. The label must be a
/// valid label string; it is not checked against a taxonomy.
pub fn match_marker(text: &str) -> Option<MarkerMatch<'_>> {
    let rest = text.strip_prefix(OPEN)?;
    let (kind, body) = match rest.strip_prefix('/') {
        Some(b) => (MarkerKind::End, b),
        None => (MarkerKind::Start, rest),
    };
    let close = body.find(CLOSE)?;
    let label = &body[..close];
    validate_label(label).ok()?;
    let len = text.len() - body.len() + close + CLOSE.len();
    Some(MarkerMatch { kind, label, len })
}

fn placeholder_is_valid(p: &str) -> bool {
    !p.is_empty() && !p.contains(OPEN) && !p.contains(CLOSE)
}

impl AnnotatedDocument {
    pub fn new(doc_id: impl Into<String>, segments: Vec<Segment>) -> Self {
        AnnotatedDocument {
            doc_id: doc_id.into(),
            segments,
        }
    }

    pub fn parse(
        doc_id: impl Into<String>,
        raw: &str,
        taxonomy: &Taxonomy,
    ) -> Result<AnnotatedDocument, MarkupError> {
        Ok(AnnotatedDocument {
            doc_id: doc_id.into(),
            segments: parse_segments(raw, taxonomy)?,
        })
    }

    pub fn entity_spans(&self) -> Vec<EntitySpan<'_>> {
        self.segments
            .iter()
            .enumerate()
            .filter_map(|(index, s)| match s {
                Segment::Entity { label, placeholder } => Some(EntitySpan {
                    index,
                    label,
                    placeholder,
                }),
                Segment::Plain(_) => None,
            })
            .collect()
    }

    pub fn entity_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Entity { .. }))
            .count()
    }

    /// Check segment invariants against `taxonomy`.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), MarkupError> {
        for span in self.entity_spans() {
            if !taxonomy.contains(span.label) {
                return Err(MarkupError::UnknownLabel {
                    offset: span.index,
                    label: span.label.to_string(),
                });
            }
            if !placeholder_is_valid(span.placeholder) {
                return Err(MarkupError::InvalidPlaceholder {
                    offset: span.index,
                    placeholder: span.placeholder.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Canonical marked-up text.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut plain = String::new();
        let segments = &self.segments;
        for seg in segments {
            match seg {
                Segment::Plain(text) => plain.push_str(text),
                Segment::Entity { label, placeholder } => {
                    escape_plain(&plain, true, &mut out);
                    plain.clear();
                    out.push_str(&start_marker(label));
                    out.push_str(placeholder);
                    out.push_str(&end_marker(label));
                }
            }
        }
        escape_plain(&plain, false, &mut out);
        out
    }
}

/// Append `text` escaped so that re-parsing yields it verbatim.
/// `before_marker` tells whether a marker follows immediately.
fn escape_plain(text: &str, before_marker: bool, out: &mut String) {
    // Walk right to left so each decision sees the output that follows it.
    let mut pieces: Vec<String> = Vec::with_capacity(text.len());
    let mut tail: Vec<char> = if before_marker {
        OPEN.chars().collect()
    } else {
        Vec::new()
    };
    for c in text.chars().rev() {
        let emitted = match c {
            '<' if tail.starts_with(&['<', '<']) => "\\<".to_string(),
            '\\' if matches!(tail.first(), Some('\\') | Some('<')) => "\\\\".to_string(),
            _ => c.to_string(),
        };
        let mut next: Vec<char> = emitted.chars().collect();
        next.extend(tail.iter().take(3));
        next.truncate(3);
        tail = next;
        pieces.push(emitted);
    }
    for p in pieces.iter().rev() {
        out.push_str(p);
    }
}

fn parse_segments(raw: &str, taxonomy: &Taxonomy) -> Result<Vec<Segment>, MarkupError> {
    let mut segments = Vec::new();
    let mut plain = String::new();
    let mut pos = 0;
    let bytes = raw.as_bytes();
    while pos < raw.len() {
        let rest = &raw[pos..];
        if bytes[pos] == b'\\' {
            match bytes.get(pos + 1) {
                Some(b'\\') | Some(b'<') => {
                    plain.push(bytes[pos + 1] as char);
                    pos += 2;
                }
                _ => {
                    plain.push('\\');
                    pos += 1;
                }
            }
            continue;
        }
        if !rest.starts_with(OPEN) {
            let c = rest.chars().next().expect("non-empty");
            plain.push(c);
            pos += c.len_utf8();
            continue;
        }
        let start = parse_marker(raw, pos)?;
        if start.kind == MarkerKind::End {
            return Err(MarkupError::UnbalancedMarker {
                offset: pos,
                kind: MarkerKind::End,
            });
        }
        if !taxonomy.contains(start.label) {
            return Err(MarkupError::UnknownLabel {
                offset: pos,
                label: start.label.to_string(),
            });
        }
        let body_start = pos + start.len;
        let Some(rel) = raw[body_start..].find(OPEN) else {
            return Err(MarkupError::UnbalancedMarker {
                offset: pos,
                kind: MarkerKind::Start,
            });
        };
        let end_pos = body_start + rel;
        let end = parse_marker(raw, end_pos)?;
        if end.kind == MarkerKind::Start {
            return Err(MarkupError::NestedMarker {
                outer: pos,
                inner: end_pos,
            });
        }
        if end.label != start.label {
            return Err(MarkupError::MismatchedMarker {
                offset: pos,
                start: start.label.to_string(),
                end: end.label.to_string(),
            });
        }
        let placeholder = &raw[body_start..end_pos];
        if placeholder.is_empty() {
            return Err(MarkupError::EmptyPlaceholder {
                offset: pos,
                label: start.label.to_string(),
            });
        }
        if !placeholder_is_valid(placeholder) {
            return Err(MarkupError::InvalidPlaceholder {
                offset: body_start,
                placeholder: placeholder.to_string(),
            });
        }
        if !plain.is_empty() {
            segments.push(Segment::Plain(std::mem::take(&mut plain)));
        }
        segments.push(Segment::Entity {
            label: start.label.to_string(),
            placeholder: placeholder.to_string(),
        });
        pos = end_pos + end.len;
    }
    if !plain.is_empty() {
        segments.push(Segment::Plain(plain));
    }
    Ok(segments)
}

fn parse_marker(raw: &str, pos: usize) -> Result<MarkerMatch<'_>, MarkupError> {
    match_marker(&raw[pos..]).ok_or_else(|| {
        let rest = &raw[pos + OPEN.len()..];
        let message = match rest.find(CLOSE) {
            None => "missing closing \">>>\"".to_string(),
            Some(i) => {
                let label = rest[..i].strip_prefix('/').unwrap_or(&rest[..i]);
                validate_label(label).err().unwrap_or_default()
            }
        };
        MarkupError::MalformedMarker {
            offset: pos,
            message,
        }
    })
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("document {doc_id:?} (line {line}): {source}")]
    Markup {
        doc_id: String,
        line: usize,
        source: MarkupError,
    },
    #[error("document id {doc_id:?} appears more than once (line {line})")]
    DuplicateDocId { doc_id: String, line: usize },
}

/// Read a line-delimited JSON corpus of `{doc_id, text}` records.
pub fn read_corpus_records(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_text = line?;
        if line_text.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line_text).map_err(|source| CorpusError::Json {
                line: i + 1,
                source,
            })?;
        if !seen.insert(record.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                doc_id: record.doc_id,
                line: i + 1,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Read and parse a corpus file.
pub fn read_corpus(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    read_corpus_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            AnnotatedDocument::parse(r.doc_id.clone(), &r.text, taxonomy).map_err(|source| {
                CorpusError::Markup {
                    doc_id: r.doc_id,
                    line: i + 1,
                    source,
                }
            })
        })
        .collect()
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    docs: &[AnnotatedDocument],
) -> Result<(), std::io::Error> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in docs {
        let rec = CorpusRecord {
            doc_id: doc.doc_id.clone(),
            text: doc.serialize(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PAPER_EXAMPLE: &str =
        "피고인 <<<내국인이름>>>A<<</내국인이름>>>(<<<주민등록번호>>>B<<</주민등록번호>>>)";

    fn plain(s: &str) -> Segment {
        Segment::Plain(s.into())
    }

    fn entity(l: &str, p: &str) -> Segment {
        Segment::Entity {
            label: l.into(),
            placeholder: p.into(),
        }
    }

    fn tax() -> Taxonomy {
        Taxonomy::shipped()
    }

    #[test]
    fn parses_the_court_example() {
        let doc = AnnotatedDocument::parse("d", PAPER_EXAMPLE, &tax()).unwrap();
        assert_eq!(
            doc.segments,
            vec![
                plain("피고인 "),
                entity("내국인이름", "A"),
                plain("("),
                entity("주민등록번호", "B"),
                plain(")"),
            ]
        );
        assert_eq!(doc.serialize(), PAPER_EXAMPLE);
        let spans: Vec<_> = doc
            .entity_spans()
            .into_iter()
            .map(|s| (s.index, s.label, s.placeholder))
            .collect();
        assert_eq!(
            spans,
            vec![(1, "내국인이름", "A"), (3, "주민등록번호", "B")]
        );
    }

    #[test]
    fn empty_input() {
        let doc = AnnotatedDocument::parse("d", "", &tax()).unwrap();
        assert!(doc.segments.is_empty());
        assert_eq!(doc.serialize(), "");
        assert!(doc.entity_spans().is_empty());
    }

    #[test]
    fn all_plain_has_no_spans() {
        let doc = AnnotatedDocument::parse("d", "피고인은 무죄.", &tax()).unwrap();
        assert!(doc.entity_spans().is_empty());
    }

    #[test]
    fn error_paths() {
        let t = tax();
        assert_eq!(
            AnnotatedDocument::parse("d", "<<<내국인이름>>>A", &t).unwrap_err(),
            MarkupError::UnbalancedMarker {
                offset: 0,
                kind: MarkerKind::Start
            }
        );
        assert_eq!(
            AnnotatedDocument::parse("d", "x <<</내국인이름>>>", &t).unwrap_err(),
            MarkupError::UnbalancedMarker {
                offset: 2,
                kind: MarkerKind::End
            }
        );
        assert!(matches!(
            AnnotatedDocument::parse(
                "d",
                "<<<내국인이름>>>A<<<교회>>>B<<</교회>>><<</내국인이름>>>",
                &t
            ),
            Err(MarkupError::NestedMarker { outer: 0, .. })
        ));
        assert!(matches!(
            AnnotatedDocument::parse("d", "<<<없는라벨>>>A<<</없는라벨>>>", &t),
            Err(MarkupError::UnknownLabel { offset: 0, .. })
        ));
        assert!(matches!(
            AnnotatedDocument::parse("d", "<<<교회>>><<</교회>>>", &t),
            Err(MarkupError::EmptyPlaceholder { .. })
        ));
        assert!(matches!(
            AnnotatedDocument::parse("d", "<<<교회>>>A<<</교도소>>>", &t),
            Err(MarkupError::MismatchedMarker { .. })
        ));
        assert!(matches!(
            AnnotatedDocument::parse("d", "a <<< b", &t),
            Err(MarkupError::MalformedMarker { offset: 2, .. })
        ));
        assert!(matches!(
            AnnotatedDocument::parse("d", "<<<교회>>>A>>>B<<</교회>>>", &t),
            Err(MarkupError::InvalidPlaceholder { .. })
        ));
    }

    #[test]
    fn literal_open_delimiter_is_escaped() {
        let doc = AnnotatedDocument::new(
            "d",
            vec![plain("a <<< b"), entity("교회", "A"), plain("\\")],
        );
        let text = doc.serialize();
        assert_eq!(text, "a \\<<< b<<<교회>>>A<<</교회>>>\\");
        assert_eq!(AnnotatedDocument::parse("d", &text, &tax()).unwrap(), doc);

        let doc = AnnotatedDocument::new("d", vec![plain("x\\"), entity("교회", "A")]);
        let text = doc.serialize();
        assert_eq!(text, "x\\\\<<<교회>>>A<<</교회>>>");
        assert_eq!(AnnotatedDocument::parse("d", &text, &tax()).unwrap(), doc);

        let doc = AnnotatedDocument::new("d", vec![plain("<<"), entity("교회", "A")]);
        let text = doc.serialize();
        assert_eq!(AnnotatedDocument::parse("d", &text, &tax()).unwrap(), doc);
    }

    #[test]
    fn corpus_file_round_trip() {
        let t = tax();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let docs = vec![
            AnnotatedDocument::parse("a", PAPER_EXAMPLE, &t).unwrap(),
            AnnotatedDocument::parse("b", "", &t).unwrap(),
        ];
        write_corpus(&path, &docs).unwrap();
        assert_eq!(read_corpus(&path, &t).unwrap(), docs);

        std::fs::write(
            &path,
            "{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\"y\"}\n",
        )
        .unwrap();
        assert!(matches!(
            read_corpus(&path, &t),
            Err(CorpusError::DuplicateDocId { line: 2, .. })
        ));
    }

    fn arb_plain() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                Just("<".to_string()),
                Just(">".to_string()),
                Just("\\".to_string()),
                Just("/".to_string()),
                Just(" ".to_string()),
                "[가-힣a-zA-Z0-9().,]{1,4}",
            ],
            1..8,
        )
        .prop_map(|v| v.concat())
    }

    fn arb_segments() -> impl Strategy<Value = Vec<Segment>> {
        let labels = ["내국인이름", "주민등록번호", "교회", "식당", "URL"];
        let ent = (0..labels.len(), "[A-Z0-9]{1,3}").prop_map(move |(i, p)| entity(labels[i], &p));
        prop::collection::vec(prop_oneof![arb_plain().prop_map(Segment::Plain), ent], 0..8)
            .prop_map(|segs| {
                // merge adjacent plain segments: parse never produces them
                let mut out: Vec<Segment> = Vec::new();
                for s in segs {
                    match (out.last_mut(), s) {
                        (Some(Segment::Plain(a)), Segment::Plain(b)) => a.push_str(&b),
                        (_, s) => out.push(s),
                    }
                }
                out
            })
    }

    proptest! {
        #[test]
        fn structure_survives_serialization(segments in arb_segments()) {
            let t = tax();
            let entities = segments.iter().filter(|s| matches!(s, Segment::Entity { .. })).count();
            let doc = AnnotatedDocument::new("d", segments);
            let text = doc.serialize();
            let parsed = AnnotatedDocument::parse("d", &text, &t).unwrap();
            prop_assert_eq!(&parsed, &doc);
            prop_assert_eq!(parsed.serialize(), text.clone());
            prop_assert_eq!(parsed.entity_count(), entities);
        }

        #[test]
        fn backslash_free_raw_text_round_trips(raw in "[가-힣a-z <>/]{0,24}") {
            let t = tax();
            if let Ok(doc) = AnnotatedDocument::parse("d", &raw, &t) {
                prop_assert_eq!(doc.serialize(), raw);
            }
        }
    }
}
