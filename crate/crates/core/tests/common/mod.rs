//! Synthetic corpora and stores for integration tests.

#![allow(dead_code)]

use deid_core::markup::Segment;
use deid_core::{AnnotatedDocument, ReplacementStore, Taxonomy};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Characters for fuzzed plain text, including every markup delimiter piece.
const FUZZ_CHARS: &[char] = &[
    '가',
    '나',
    '다',
    '피',
    '고',
    '인',
    '이',
    '는',
    ' ',
    ' ',
    '\t',
    '.',
    ',',
    '(',
    ')',
    '<',
    '<',
    '>',
    '>',
    '/',
    '\\',
    'a',
    'Z',
    '1',
    '9',
    '-',
    '\u{00e9}',
    '\u{1F600}',
];

const PLACEHOLDER_CHARS: &[char] = &['A', 'B', 'C', 'L', 'Z', '1', '2', '9', '가', '갑'];

fn random_string(rng: &mut ChaCha8Rng, chars: &[char], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *chars.choose(rng).unwrap()).collect()
}

/// A document with alternating non-empty plain and entity segments.
pub fn fuzz_document(rng: &mut ChaCha8Rng, doc_id: &str, labels: &[&str]) -> AnnotatedDocument {
    let mut segments = Vec::new();
    let n = rng.gen_range(0..8);
    let mut last_plain = false;
    for _ in 0..n {
        if !last_plain && rng.gen_bool(0.5) {
            segments.push(Segment::Plain(random_string(rng, FUZZ_CHARS, 1, 12)));
            last_plain = true;
        } else {
            segments.push(Segment::Entity {
                label: labels.choose(rng).unwrap().to_string(),
                placeholder: random_string(rng, PLACEHOLDER_CHARS, 1, 3),
            });
            last_plain = false;
        }
    }
    AnnotatedDocument::new(doc_id, segments)
}

/// Plain-text vocabulary. Shares no character with any mention.
const PLAIN_WORDS: &[&str] = &[
    "피고인",
    "피해자",
    "사건",
    "법원",
    "에서",
    "증거",
    "기록",
    "진술",
    "하였다",
    "이다",
    "그",
    "당시",
    "범행",
];
const PARTICLES: &[&str] = &["는", "이", "를", "에게", ""];
const MENTION_CHARS: &[char] = &[
    'B', 'C', 'D', 'F', 'G', 'H', 'J', 'K', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W', 'X', '2',
    '3', '4', '5', '6', '7', '8',
];

pub struct Synthetic {
    pub docs: Vec<AnnotatedDocument>,
    pub store: ReplacementStore,
    pub labels: Vec<String>,
}

/// `n_docs` documents over `n_labels` taxonomy labels. Every label gets
/// `mentions_per_label` listed mentions, unique across the whole store and
/// spelled with characters that never occur in plain text. Entity spans
/// are always separated by plain words.
pub fn synthetic(
    rng: &mut ChaCha8Rng,
    taxonomy: &Taxonomy,
    n_docs: usize,
    n_labels: usize,
    mentions_per_label: usize,
) -> Synthetic {
    let labels: Vec<String> = taxonomy
        .labels()
        .step_by(7)
        .take(n_labels)
        .map(str::to_string)
        .collect();
    let mut store = ReplacementStore::new();
    let mut seen = std::collections::HashSet::new();
    for label in &labels {
        let mut mentions = Vec::new();
        while mentions.len() < mentions_per_label {
            let m = random_string(rng, MENTION_CHARS, 4, 7);
            if seen.insert(m.clone()) {
                mentions.push(m);
            }
        }
        store.insert_mentions(label, mentions).unwrap();
    }
    let docs = (0..n_docs)
        .map(|i| {
            let mut segs = Vec::new();
            let mut plain = String::new();
            for _ in 0..rng.gen_range(2..6) {
                plain.push_str(PLAIN_WORDS.choose(rng).unwrap());
                plain.push(' ');
            }
            segs.push(Segment::Plain(plain));
            for _ in 0..rng.gen_range(1..5) {
                segs.push(Segment::Entity {
                    label: labels.choose(rng).unwrap().clone(),
                    placeholder: ["A", "B", "C", "1", "2"].choose(rng).unwrap().to_string(),
                });
                let mut plain = PARTICLES.choose(rng).unwrap().to_string();
                plain.push(' ');
                plain.push_str(PLAIN_WORDS.choose(rng).unwrap());
                plain.push_str(if rng.gen_bool(0.3) { ". " } else { " " });
                segs.push(Segment::Plain(plain));
            }
            AnnotatedDocument::new(format!("syn-{i:04}"), segs)
        })
        .collect();
    Synthetic {
        docs,
        store,
        labels,
    }
}

/// Random corpus lines mixing Hangul, Latin, digits, whitespace runs,
/// punctuation, astral-plane characters and occasional markers.
pub fn corpus_line(rng: &mut ChaCha8Rng, labels: &[&str]) -> String {
    const PIECES: &[&str] = &[
        "피고인",
        "홍길동",
        "이",
        "는",
        "을",
        "에게",
        "법원",
        "  ",
        " ",
        "\t",
        ".",
        ",",
        "(",
        ")",
        "2023",
        "고단",
        "abc",
        "Seoul",
        "\u{1F600}",
        "\u{00e9}",
        "e\u{0301}",
        "\u{1100}\u{1161}",
        "<<",
        ">>>",
        "\\",
        "Ω",
        "ㄱ",
    ];
    let mut s = String::new();
    for _ in 0..rng.gen_range(0..20) {
        if rng.gen_bool(0.05) {
            let label = labels.choose(rng).unwrap();
            s.push_str(&format!("<<<{label}>>>A<<</{label}>>>"));
        } else {
            s.push_str(PIECES.choose(rng).unwrap());
        }
    }
    s
}
