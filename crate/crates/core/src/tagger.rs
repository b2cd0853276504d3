//! Token classifiers over marker-free token sequences.
//!
//! External models plug in through exchange files: requests carry
//! `{doc_id, epoch, chunk, x}`, predictions carry `{doc_id, epoch, chunk, y_pred}`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::TrainingInstance;
use crate::metrics::OUTSIDE;
use crate::store::ReplacementStore;
use crate::taxonomy::{IdentifierKind, Taxonomy};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("{key}: tagger returned {got} labels for {expected} tokens")]
    LengthMismatch {
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("{key}: label {label} is not in the taxonomy")]
    UnknownLabel { key: String, label: String },
    #[error("no prediction for {0}")]
    MissingPrediction(String),
    #[error("duplicate prediction for {0}")]
    DuplicatePrediction(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub doc_id: String,
    pub epoch: u32,
    #[serde(default)]
    pub chunk: usize,
}

impl std::fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/epoch {}/chunk {}",
            self.doc_id, self.epoch, self.chunk
        )
    }
}

impl TrainingInstance {
    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            doc_id: self.doc_id.clone(),
            epoch: self.epoch,
            chunk: self.chunk,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TagRequest<'a> {
    pub key: &'a InstanceKey,
    pub x: &'a [u32],
}

pub trait Tagger {
    fn predict(&self, req: TagRequest<'_>) -> Result<Vec<String>, TaggerError>;
}

/// Runs `tagger` and checks its output against the input length and the taxonomy.
pub fn tag(
    tagger: &dyn Tagger,
    req: TagRequest<'_>,
    taxonomy: &Taxonomy,
) -> Result<Vec<String>, TaggerError> {
    let y = tagger.predict(req)?;
    if y.len() != req.x.len() {
        return Err(TaggerError::LengthMismatch {
            key: req.key.to_string(),
            expected: req.x.len(),
            got: y.len(),
        });
    }
    if let Some(bad) = y.iter().find(|l| *l != OUTSIDE && !taxonomy.contains(l)) {
        return Err(TaggerError::UnknownLabel {
            key: req.key.to_string(),
            label: bad.clone(),
        });
    }
    Ok(y)
}

/// Looks predictions up by instance key; used for gold and exchange files.
#[derive(Debug, Clone, Default)]
pub struct LookupTagger {
    table: HashMap<InstanceKey, Vec<String>>,
}

impl LookupTagger {
    /// The gold oracle: predicts each instance's own `y`.
    pub fn oracle<'a>(instances: impl IntoIterator<Item = &'a TrainingInstance>) -> Self {
        LookupTagger {
            table: instances
                .into_iter()
                .map(|i| (i.key(), i.y.clone()))
                .collect(),
        }
    }

    pub fn from_predictions(preds: Vec<Prediction>) -> Result<Self, TaggerError> {
        let mut table = HashMap::new();
        for p in preds {
            let key = InstanceKey {
                doc_id: p.doc_id,
                epoch: p.epoch,
                chunk: p.chunk,
            };
            if table.contains_key(&key) {
                return Err(TaggerError::DuplicatePrediction(key.to_string()));
            }
            table.insert(key, p.y_pred);
        }
        Ok(LookupTagger { table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, key: &InstanceKey) -> bool {
        self.table.contains_key(key)
    }
}

impl Tagger for LookupTagger {
    fn predict(&self, req: TagRequest<'_>) -> Result<Vec<String>, TaggerError> {
        self.table
            .get(req.key)
            .cloned()
            .ok_or_else(|| TaggerError::MissingPrediction(req.key.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<u32, usize>,
    /// Label index into the priority table.
    terminal: Option<usize>,
}

/// Longest-match tagger over token-ID paths of listed store mentions.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    nodes: Vec<Node>,
    /// Labels ordered by priority, highest first.
    labels: Vec<String>,
    entries: usize,
}

/// Direct-identifier labels first, then quasi; taxonomy order within each.
pub fn default_priority(taxonomy: &Taxonomy) -> Vec<String> {
    let mut labels: Vec<(u8, usize, &str)> = taxonomy
        .labels()
        .enumerate()
        .map(|(i, l)| {
            let kind = taxonomy.kind_of(l).expect("own label");
            (u8::from(kind != IdentifierKind::Direct), i, l)
        })
        .collect();
    labels.sort();
    labels.into_iter().map(|(_, _, l)| l.to_string()).collect()
}

impl Gazetteer {
    /// Inserts every listed mention of every store label named in
    /// `priority`. Where two labels share a token path, the earlier one in
    /// `priority` keeps it.
    pub fn build(store: &ReplacementStore, vocab: &Vocabulary, priority: &[String]) -> Self {
        let mut g = Gazetteer {
            nodes: vec![Node::default()],
            labels: priority.to_vec(),
            entries: 0,
        };
        for (rank, label) in priority.iter().enumerate() {
            for mention in store.mentions(label) {
                let ids = vocab.encode_plain(mention);
                if !ids.is_empty() {
                    g.insert(&ids, rank);
                }
            }
        }
        g
    }

    fn insert(&mut self, ids: &[u32], rank: usize) {
        let mut at = 0;
        for &id in ids {
            at = match self.nodes[at].children.get(&id) {
                Some(&n) => n,
                None => {
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[at].children.insert(id, n);
                    n
                }
            };
        }
        match self.nodes[at].terminal {
            None => {
                self.nodes[at].terminal = Some(rank);
                self.entries += 1;
            }
            Some(r) if rank < r => self.nodes[at].terminal = Some(rank),
            Some(_) => {}
        }
    }

    /// Number of distinct token paths.
    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Every stored path with its label, in token-ID order.
    pub fn paths(&self) -> Vec<(Vec<u32>, &str)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            if let Some(r) = self.nodes[n].terminal {
                out.push((path.clone(), self.labels[r].as_str()));
            }
            for (&id, &child) in self.nodes[n].children.iter().rev() {
                let mut p = path.clone();
                p.push(id);
                stack.push((child, p));
            }
        }
        out
    }

    pub fn tag_ids(&self, x: &[u32]) -> Vec<String> {
        let mut y = vec![OUTSIDE.to_string(); x.len()];
        let mut i = 0;
        while i < x.len() {
            let mut at = 0;
            let mut best: Option<(usize, usize)> = None;
            for (j, id) in x[i..].iter().enumerate() {
                match self.nodes[at].children.get(id) {
                    Some(&n) => at = n,
                    None => break,
                }
                if let Some(r) = self.nodes[at].terminal {
                    best = Some((i + j + 1, r));
                }
            }
            match best {
                Some((end, r)) => {
                    for slot in &mut y[i..end] {
                        *slot = self.labels[r].clone();
                    }
                    i = end;
                }
                None => i += 1,
            }
        }
        y
    }
}

impl Tagger for Gazetteer {
    fn predict(&self, req: TagRequest<'_>) -> Result<Vec<String>, TaggerError> {
        Ok(self.tag_ids(req.x))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRequestRecord {
    pub doc_id: String,
    pub epoch: u32,
    pub chunk: usize,
    pub x: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub epoch: u32,
    #[serde(default)]
    pub chunk: usize,
    pub y_pred: Vec<String>,
}

fn write_lines<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), TaggerError> {
    let io = |source| TaggerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(&item).expect("record serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes the model-facing request file for a dataset split.
pub fn write_requests(
    path: impl AsRef<Path>,
    instances: &[TrainingInstance],
) -> Result<(), TaggerError> {
    write_lines(
        path.as_ref(),
        instances.iter().map(|i| TagRequestRecord {
            doc_id: i.doc_id.clone(),
            epoch: i.epoch,
            chunk: i.chunk,
            x: i.x.clone(),
        }),
    )
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<(), TaggerError> {
    write_lines(path.as_ref(), preds)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, TaggerError> {
    let path = path.as_ref();
    let io = |source| TaggerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| TaggerError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Tags every instance, producing one prediction record per instance.
pub fn tag_all(
    tagger: &dyn Tagger,
    instances: &[TrainingInstance],
    taxonomy: &Taxonomy,
) -> Result<Vec<Prediction>, TaggerError> {
    instances
        .iter()
        .map(|inst| {
            let key = inst.key();
            let y_pred = tag(
                tagger,
                TagRequest {
                    key: &key,
                    x: &inst.x,
                },
                taxonomy,
            )?;
            Ok(Prediction {
                doc_id: key.doc_id,
                epoch: key.epoch,
                chunk: key.chunk,
                y_pred,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{BpeModel, MorphDict};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn taxonomy() -> &'static Taxonomy {
        static T: OnceLock<Taxonomy> = OnceLock::new();
        T.get_or_init(Taxonomy::shipped)
    }

    fn vocab() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(|| {
            let model = BpeModel {
                alphabet: "홍길동서울김철수 ab".chars().map(String::from).collect(),
                merges: vec![("홍".into(), "길".into()), ("서".into(), "울".into())],
            };
            Vocabulary::build(MorphDict::new(), &model, taxonomy())
        })
    }

    fn key() -> InstanceKey {
        InstanceKey {
            doc_id: "d".into(),
            epoch: 0,
            chunk: 0,
        }
    }

    #[test]
    fn priority_puts_direct_labels_first() {
        let p = default_priority(taxonomy());
        assert_eq!(p.len(), taxonomy().len());
        let first_quasi = p
            .iter()
            .position(|l| taxonomy().kind_of(l) == Some(IdentifierKind::Quasi))
            .unwrap();
        assert!(p[..first_quasi]
            .iter()
            .all(|l| taxonomy().kind_of(l) == Some(IdentifierKind::Direct)));
        assert!(p[first_quasi..]
            .iter()
            .all(|l| taxonomy().kind_of(l) == Some(IdentifierKind::Quasi)));
        assert_eq!(p[0], "내국인이름");
    }

    #[test]
    fn single_mention_builds_one_path() {
        let mut s = ReplacementStore::new();
        s.insert_mentions("내국인이름", ["홍길동"]).unwrap();
        let g = Gazetteer::build(&s, vocab(), &default_priority(taxonomy()));
        let ids = vocab().encode_plain("홍길동");
        assert_eq!(ids.len(), 2);
        assert_eq!(g.paths(), vec![(ids.clone(), "내국인이름")]);
        let mut x = vocab().encode_plain("a b");
        let at = x.len();
        x.extend(&ids);
        let y = g.tag_ids(&x);
        assert_eq!(&y[at..], &["내국인이름", "내국인이름"]);
        assert!(y[..at].iter().all(|l| l == "O"));
    }

    #[test]
    fn empty_store_tags_nothing() {
        let g = Gazetteer::build(
            &ReplacementStore::new(),
            vocab(),
            &default_priority(taxonomy()),
        );
        assert!(g.is_empty());
        let x = vocab().encode_plain("홍길동 서울");
        assert!(g.tag_ids(&x).iter().all(|l| l == "O"));
    }

    #[test]
    fn shared_mention_goes_to_the_direct_label() {
        let mut s = ReplacementStore::new();
        s.insert_mentions("행정시", ["서울"]).unwrap();
        s.insert_mentions("내국인이름", ["서울"]).unwrap();
        let g = Gazetteer::build(&s, vocab(), &default_priority(taxonomy()));
        assert_eq!(g.tag_ids(&vocab().encode_plain("서울")), vec!["내국인이름"]);
    }

    #[test]
    fn longest_match_wins() {
        let mut s = ReplacementStore::new();
        s.insert_mentions("내국인이름", ["홍길"]).unwrap();
        s.insert_mentions("행정시", ["홍길동"]).unwrap();
        let g = Gazetteer::build(&s, vocab(), &default_priority(taxonomy()));
        assert_eq!(
            g.tag_ids(&vocab().encode_plain("홍길동")),
            vec!["행정시", "행정시"]
        );
        assert_eq!(
            g.tag_ids(&vocab().encode_plain("홍길a")),
            vec!["내국인이름", "O"]
        );
    }

    struct Broken;
    impl Tagger for Broken {
        fn predict(&self, req: TagRequest<'_>) -> Result<Vec<String>, TaggerError> {
            Ok(vec![
                "없는라벨".to_string();
                req.x.len() + usize::from(req.x.len() == 1)
            ])
        }
    }

    #[test]
    fn wrapper_checks_length_and_labels() {
        let k = key();
        assert!(matches!(
            tag(&Broken, TagRequest { key: &k, x: &[1] }, taxonomy()),
            Err(TaggerError::LengthMismatch {
                expected: 1,
                got: 2,
                ..
            })
        ));
        assert!(matches!(
            tag(
                &Broken,
                TagRequest {
                    key: &k,
                    x: &[1, 2]
                },
                taxonomy()
            ),
            Err(TaggerError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn oracle_and_exchange_round_trip() {
        let inst = TrainingInstance {
            doc_id: "d".into(),
            epoch: 0,
            chunk: 0,
            x: vec![300, 301],
            y: vec!["O".into(), "내국인이름".into()],
            spans: vec![],
        };
        let oracle = LookupTagger::oracle([&inst]);
        let preds = tag_all(&oracle, std::slice::from_ref(&inst), taxonomy()).unwrap();
        assert_eq!(preds[0].y_pred, inst.y);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        write_predictions(&p, &preds).unwrap();
        let back = read_predictions(&p).unwrap();
        assert_eq!(back, preds);
        let ex = LookupTagger::from_predictions(back.clone()).unwrap();
        assert_eq!(
            tag_all(&ex, std::slice::from_ref(&inst), taxonomy()).unwrap(),
            preds
        );
        let dup = [back.clone(), back].concat();
        assert!(matches!(
            LookupTagger::from_predictions(dup),
            Err(TaggerError::DuplicatePrediction(_))
        ));
        let other = TrainingInstance {
            doc_id: "e".into(),
            ..inst
        };
        assert!(matches!(
            tag_all(&ex, &[other], taxonomy()),
            Err(TaggerError::MissingPrediction(_))
        ));
    }

    /// Independent check: every position inside some occurrence of a stored
    /// path must be labeled, and labeled positions must lie inside one.
    fn occurrences(x: &[u32], paths: &[(Vec<u32>, &str)]) -> Vec<bool> {
        let mut covered = vec![false; x.len()];
        for (p, _) in paths {
            for i in 0..x.len() {
                if x[i..].starts_with(p) {
                    for c in &mut covered[i..i + p.len()] {
                        *c = true;
                    }
                }
            }
        }
        covered
    }

    proptest! {
        #[test]
        fn tagging_agrees_with_substring_search(
            text in "[홍길동서울김철수 ab]{0,20}",
            order in Just(vec!["홍길동", "서울", "김철수", "길동"]).prop_shuffle(),
        ) {
            let mut s = ReplacementStore::new();
            for m in &order {
                s.insert_mentions("내국인이름", [*m]).unwrap();
            }
            let g = Gazetteer::build(&s, vocab(), &default_priority(taxonomy()));
            let x = vocab().encode_plain(&text);
            let y = g.tag_ids(&x);
            let paths = g.paths();
            let covered = occurrences(&x, &paths);
            for (k, l) in y.iter().enumerate() {
                if l != "O" {
                    prop_assert!(covered[k]);
                }
            }
            // Any path occurrence starting at an untagged position would have been matched.
            for (p, _) in &paths {
                for i in 0..x.len() {
                    if x[i..].starts_with(p) {
                        prop_assert!(y[i] != "O");
                    }
                }
            }
            // Store order does not matter.
            let mut rev = ReplacementStore::new();
            for m in order.iter().rev() {
                rev.insert_mentions("내국인이름", [*m]).unwrap();
            }
            let g2 = Gazetteer::build(&rev, vocab(), &default_priority(taxonomy()));
            prop_assert_eq!(g2.tag_ids(&x), y);
            for (p, _) in &paths {
                let mention = vocab().decode(p).unwrap();
                prop_assert!(s.mentions("내국인이름").contains(&mention));
            }
        }
    }
}
