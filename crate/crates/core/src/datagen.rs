//! Aligned (x, y) instances: marker-delimited placeholders are swapped for
//! sampled mentions and labeled token by token.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keying::{draw_index, sha256_hex, split_key};
use crate::markup::{AnnotatedDocument, MarkerKind};
use crate::metrics::OUTSIDE;
use crate::store::{ReplacementStore, StoreError};
use crate::tokenizer::{TokenizerError, Vocabulary};

/// Model input window in tokens.
pub const DEFAULT_WINDOW: usize = 2048;
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidSplit(f64),
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),
    #[error("document {doc_id}: {source}")]
    Store {
        doc_id: String,
        #[source]
        source: StoreError,
    },
    #[error("document {doc_id}: {source}")]
    Tokenizer {
        doc_id: String,
        #[source]
        source: TokenizerError,
    },
    #[error("document {doc_id}: dangling marker at token {position}")]
    DanglingMarker { doc_id: String, position: usize },
    #[error("document {doc_id}: a {len}-token span does not fit the {window}-token window")]
    SpanExceedsWindow {
        doc_id: String,
        len: usize,
        window: usize,
    },
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementMode {
    /// One draw per span, reused in every epoch.
    Single,
    /// A fresh draw per span in every epoch.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub mode: ReplacementMode,
    pub epochs: u32,
    pub seed: u64,
}

impl ReplacementPlan {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.epochs == 0 {
            return Err(DatagenError::InvalidPlan(
                "epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_epoch(&self, epoch: u32) -> u32 {
        match self.mode {
            ReplacementMode::Single => 0,
            ReplacementMode::PerEpoch => epoch,
        }
    }
}

/// A replaced span: `x[start..end]` carries `label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanInfo {
    pub start: usize,
    pub end: usize,
    pub label: String,
    /// Position of the span within its source document.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub doc_id: String,
    pub epoch: u32,
    #[serde(default)]
    pub chunk: usize,
    pub x: Vec<u32>,
    pub y: Vec<String>,
    #[serde(default)]
    pub spans: Vec<SpanInfo>,
}

/// Replaces every span of `doc` with a mention drawn for `epoch`.
pub fn build_instance(
    doc: &AnnotatedDocument,
    vocab: &Vocabulary,
    store: &ReplacementStore,
    plan: &ReplacementPlan,
    epoch: u32,
) -> Result<TrainingInstance, DatagenError> {
    let tokens = vocab
        .encode_document(doc)
        .map_err(|source| DatagenError::Tokenizer {
            doc_id: doc.doc_id.clone(),
            source,
        })?;
    let eff = plan.effective_epoch(epoch);
    let dangling = |position| DatagenError::DanglingMarker {
        doc_id: doc.doc_id.clone(),
        position,
    };

    let mut inst = TrainingInstance {
        doc_id: doc.doc_id.clone(),
        epoch,
        chunk: 0,
        x: Vec::with_capacity(tokens.len()),
        y: Vec::with_capacity(tokens.len()),
        spans: Vec::new(),
    };
    let mut i = 0;
    while i < tokens.len() {
        let Some(open) = vocab.special(tokens[i]) else {
            inst.x.push(tokens[i]);
            inst.y.push(OUTSIDE.to_string());
            i += 1;
            continue;
        };
        if open.kind != MarkerKind::Start {
            return Err(dangling(i));
        }
        let close = (i + 1..tokens.len())
            .find(|&j| vocab.is_special(tokens[j]))
            .ok_or_else(|| dangling(i))?;
        match vocab.special(tokens[close]) {
            Some(s) if s.kind == MarkerKind::End && s.label == open.label => {}
            _ => return Err(dangling(close)),
        }
        let ordinal = inst.spans.len();
        let mention = store
            .sample(open.label, plan.seed, draw_index(&doc.doc_id, ordinal, eff))
            .map_err(|source| DatagenError::Store {
                doc_id: doc.doc_id.clone(),
                source,
            })?;
        let ids = vocab.encode_plain(&mention);
        let start = inst.x.len();
        inst.x.extend_from_slice(&ids);
        inst.y
            .extend(std::iter::repeat_n(open.label.to_string(), ids.len()));
        inst.spans.push(SpanInfo {
            start,
            end: inst.x.len(),
            label: open.label.to_string(),
            ordinal,
        });
        i = close + 1;
    }
    Ok(inst)
}

/// Cuts an instance into pieces of at most `window` tokens. Each cut is
/// placed as late as possible without splitting a span.
pub fn split_window(
    inst: TrainingInstance,
    window: usize,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    assert!(window > 0, "window must be positive");
    if inst.x.len() <= window {
        return Ok(vec![inst]);
    }
    let inside = |c: usize| inst.spans.iter().any(|s| s.start < c && c < s.end);
    let mut out = Vec::new();
    let mut from = 0;
    while from < inst.x.len() {
        let to = if inst.x.len() - from <= window {
            inst.x.len()
        } else {
            match (from + 1..=from + window).rev().find(|&c| !inside(c)) {
                Some(c) => c,
                None => {
                    let s = inst
                        .spans
                        .iter()
                        .find(|s| s.start <= from && from < s.end)
                        .or_else(|| {
                            inst.spans
                                .iter()
                                .find(|s| s.start < from + window && from + window < s.end)
                        });
                    return Err(DatagenError::SpanExceedsWindow {
                        doc_id: inst.doc_id.clone(),
                        len: s.map_or(window + 1, |s| s.end - s.start),
                        window,
                    });
                }
            }
        };
        out.push(TrainingInstance {
            doc_id: inst.doc_id.clone(),
            epoch: inst.epoch,
            chunk: out.len(),
            x: inst.x[from..to].to_vec(),
            y: inst.y[from..to].to_vec(),
            spans: inst
                .spans
                .iter()
                .filter(|s| from <= s.start && s.end <= to)
                .map(|s| SpanInfo {
                    start: s.start - from,
                    end: s.end - from,
                    ..s.clone()
                })
                .collect(),
        });
        from = to;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<TrainingInstance>,
    pub validation: Vec<TrainingInstance>,
    pub train_docs: Vec<String>,
    pub validation_docs: Vec<String>,
    pub warnings: Vec<String>,
}

/// Document ids in split order: sorted by a seed-keyed hash of the id.
pub fn split_documents<'a>(
    doc_ids: impl IntoIterator<Item = &'a str>,
    seed: u64,
    split: f64,
) -> Result<(Vec<&'a str>, Vec<&'a str>), DatagenError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(DatagenError::InvalidSplit(split));
    }
    let mut ids: Vec<(&str, [u8; 32])> = Vec::new();
    let mut seen = HashSet::new();
    for id in doc_ids {
        if !seen.insert(id) {
            return Err(DatagenError::DuplicateDocId(id.to_string()));
        }
        ids.push((id, split_key(seed, id)));
    }
    ids.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n_train = (split * ids.len() as f64).round() as usize;
    let ordered: Vec<&str> = ids.into_iter().map(|(id, _)| id).collect();
    let (t, v) = ordered.split_at(n_train);
    Ok((t.to_vec(), v.to_vec()))
}

/// Train instances cover every epoch (only epoch 0 in single mode);
/// validation instances use frozen epoch-0 draws.
pub fn generate_dataset(
    corpus: &[AnnotatedDocument],
    plan: &ReplacementPlan,
    vocab: &Vocabulary,
    store: &ReplacementStore,
    split: f64,
    window: usize,
) -> Result<Dataset, DatagenError> {
    plan.validate()?;
    let (train_ids, val_ids) =
        split_documents(corpus.iter().map(|d| d.doc_id.as_str()), plan.seed, split)?;
    let by_id: BTreeMap<&str, &AnnotatedDocument> =
        corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();

    let mut ds = Dataset {
        train_docs: train_ids.iter().map(|s| s.to_string()).collect(),
        validation_docs: val_ids.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    if train_ids.is_empty() {
        ds.warnings.push("training split is empty".into());
    }
    if val_ids.is_empty() {
        ds.warnings.push("validation split is empty".into());
    }
    let train_epochs = match plan.mode {
        ReplacementMode::Single => 1,
        ReplacementMode::PerEpoch => plan.epochs,
    };
    for epoch in 0..train_epochs {
        for id in &train_ids {
            let inst = build_instance(by_id[id], vocab, store, plan, epoch)?;
            ds.train.extend(split_window(inst, window)?);
        }
    }
    let frozen = ReplacementPlan {
        mode: ReplacementMode::Single,
        ..*plan
    };
    for id in &val_ids {
        let inst = build_instance(by_id[id], vocab, store, &frozen, 0)?;
        ds.validation.extend(split_window(inst, window)?);
    }
    Ok(ds)
}

/// Rewrites raw labels as `B-`/`I-` tags using span boundaries.
pub fn to_bio(inst: &TrainingInstance) -> Vec<String> {
    let mut y: Vec<String> = inst.y.clone();
    for s in &inst.spans {
        for (k, tag) in y[s.start..s.end].iter_mut().enumerate() {
            *tag = format!("{}-{}", if k == 0 { "B" } else { "I" }, s.label);
        }
    }
    y
}

/// Drops a `B-`/`I-` prefix if present.
pub fn strip_bio(label: &str) -> &str {
    label
        .strip_prefix("B-")
        .or_else(|| label.strip_prefix("I-"))
        .unwrap_or(label)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelStats {
    pub tokens: u64,
    pub spans: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub instances: u64,
    pub tokens: u64,
    pub per_label: BTreeMap<String, LabelStats>,
}

pub fn instance_stats<'a>(set: impl IntoIterator<Item = &'a TrainingInstance>) -> DatasetStats {
    let mut st = DatasetStats::default();
    for inst in set {
        st.instances += 1;
        st.tokens += inst.x.len() as u64;
        for label in inst.y.iter().filter(|l| *l != OUTSIDE) {
            st.per_label.entry(label.clone()).or_default().tokens += 1;
        }
        for s in &inst.spans {
            st.per_label.entry(s.label.clone()).or_default().spans += 1;
        }
    }
    st
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "label\ttokens\tspans")?;
        for (label, s) in &self.per_label {
            writeln!(f, "{label}\t{}\t{}", s.tokens, s.spans)?;
        }
        let spans: u64 = self.per_label.values().map(|s| s.spans).sum();
        let ent: u64 = self.per_label.values().map(|s| s.tokens).sum();
        write!(
            f,
            "total\t{ent}\t{spans}\t({} instances, {} tokens)",
            self.instances, self.tokens
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: ReplacementPlan,
    pub split: f64,
    pub window: usize,
    pub label_scheme: String,
    pub taxonomy_hash: String,
    pub vocab_hash: String,
    pub store_hash: String,
    pub train_instances: usize,
    pub validation_instances: usize,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

fn record_line(inst: &TrainingInstance, bio: bool) -> String {
    if bio {
        let tagged = TrainingInstance {
            y: to_bio(inst),
            ..inst.clone()
        };
        serde_json::to_string(&tagged).expect("instance serializes")
    } else {
        serde_json::to_string(inst).expect("instance serializes")
    }
}

fn write_jsonl(path: &Path, set: &[TrainingInstance], bio: bool) -> Result<String, DatagenError> {
    let io = |source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut body = String::new();
    for inst in set {
        body.push_str(&record_line(inst, bio));
        body.push('\n');
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(body.as_bytes()).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(sha256_hex(body.as_bytes()))
}

pub struct OutputHashes<'a> {
    pub taxonomy: &'a str,
    pub vocab: &'a str,
    pub store: &'a str,
}

/// Writes the two splits and the manifest into `dir`. On failure, files
/// written so far are removed.
pub fn write_dataset(
    dir: &Path,
    ds: &Dataset,
    plan: &ReplacementPlan,
    split: f64,
    window: usize,
    bio: bool,
    hashes: OutputHashes<'_>,
) -> Result<Manifest, DatagenError> {
    let paths = [
        dir.join(TRAIN_FILE),
        dir.join(VALIDATION_FILE),
        dir.join(MANIFEST_FILE),
    ];
    let result = (|| {
        fs::create_dir_all(dir).map_err(|source| DatagenError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files = BTreeMap::new();
        files.insert(
            TRAIN_FILE.to_string(),
            write_jsonl(&paths[0], &ds.train, bio)?,
        );
        files.insert(
            VALIDATION_FILE.to_string(),
            write_jsonl(&paths[1], &ds.validation, bio)?,
        );
        let manifest = Manifest {
            plan: *plan,
            split,
            window,
            label_scheme: if bio { "bio" } else { "raw" }.to_string(),
            taxonomy_hash: hashes.taxonomy.to_string(),
            vocab_hash: hashes.vocab.to_string(),
            store_hash: hashes.store.to_string(),
            train_instances: ds.train.len(),
            validation_instances: ds.validation.len(),
            files,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&paths[2], json).map_err(|source| DatagenError::Io {
            path: paths[2].clone(),
            source,
        })?;
        Ok(manifest)
    })();
    if result.is_err() {
        for p in &paths {
            let _ = fs::remove_file(p);
        }
    }
    result
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>, DatagenError> {
    let path = path.as_ref();
    let io = |source| DatagenError::Io {
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
        let inst: TrainingInstance =
            serde_json::from_str(&line).map_err(|source| DatagenError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markup::Segment;
    use crate::tokenizer::{BpeModel, MorphDict, MorphEntry};
    use crate::Taxonomy;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn taxonomy() -> &'static Taxonomy {
        static T: OnceLock<Taxonomy> = OnceLock::new();
        T.get_or_init(Taxonomy::shipped)
    }

    fn vocab() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(|| {
            let dict = MorphDict::from_entries([
                MorphEntry {
                    surface: "피고인".into(),
                    pos: "NNG".into(),
                    cost: 2000,
                },
                MorphEntry {
                    surface: "이".into(),
                    pos: "JKS".into(),
                    cost: 1000,
                },
                MorphEntry {
                    surface: "는".into(),
                    pos: "JX".into(),
                    cost: 1000,
                },
            ]);
            let alphabet: Vec<String> = "홍길동김철수영희 ABLX식당교회"
                .chars()
                .map(String::from)
                .collect();
            let model = BpeModel {
                alphabet,
                merges: vec![("홍".into(), "길".into())],
            };
            Vocabulary::build(dict, &model, taxonomy())
        })
    }

    fn store(names: &[&str]) -> ReplacementStore {
        let mut s = ReplacementStore::new();
        s.insert_mentions("내국인이름", names.iter().copied())
            .unwrap();
        s
    }

    fn doc(id: &str, raw: &str) -> AnnotatedDocument {
        AnnotatedDocument::parse(id, raw, taxonomy()).unwrap()
    }

    fn plan(mode: ReplacementMode, epochs: u32) -> ReplacementPlan {
        ReplacementPlan {
            mode,
            epochs,
            seed: 1200,
        }
    }

    #[test]
    fn placeholder_span_becomes_mention_tokens() {
        let v = vocab();
        let d = doc("d1", "피고인 <<<내국인이름>>>L<<</내국인이름>>>이");
        let x = v.encode_document(&d).unwrap();
        assert_eq!(x.len(), 6);
        let inst = build_instance(
            &d,
            v,
            &store(&["홍길동"]),
            &plan(ReplacementMode::Single, 1),
            0,
        )
        .unwrap();
        let m = v.encode_plain("홍길동");
        assert_eq!(m.len(), 2);
        assert_eq!(inst.x, vec![x[0], x[1], m[0], m[1], x[5]]);
        assert_eq!(inst.y, vec!["O", "O", "내국인이름", "내국인이름", "O"]);
        assert_eq!(
            inst.spans,
            vec![SpanInfo {
                start: 2,
                end: 4,
                label: "내국인이름".into(),
                ordinal: 0
            }]
        );
        let st = instance_stats([&inst]);
        assert_eq!(
            st.per_label["내국인이름"],
            LabelStats {
                tokens: 2,
                spans: 1
            }
        );
        assert_eq!(
            to_bio(&inst),
            vec!["O", "O", "B-내국인이름", "I-내국인이름", "O"]
        );
    }

    #[test]
    fn document_without_entities() {
        let v = vocab();
        let d = doc("d", "피고인이 ABX");
        let inst = build_instance(
            &d,
            v,
            &ReplacementStore::new(),
            &plan(ReplacementMode::Single, 1),
            0,
        )
        .unwrap();
        assert_eq!(inst.x, v.encode_document(&d).unwrap());
        assert!(inst.y.iter().all(|l| l == "O"));
        assert_eq!(
            instance_stats([] as [&TrainingInstance; 0]),
            DatasetStats::default()
        );
    }

    #[test]
    fn missing_source_is_an_error() {
        let d = doc("d", "<<<식당>>>A<<</식당>>>");
        let err = build_instance(
            &d,
            vocab(),
            &store(&["홍길동"]),
            &plan(ReplacementMode::Single, 1),
            0,
        );
        assert!(matches!(
            err,
            Err(DatagenError::Store {
                source: StoreError::NoSourceForLabel(_),
                ..
            })
        ));
    }

    #[test]
    fn single_mode_ignores_epoch_and_per_epoch_varies() {
        let names: Vec<String> = (0..40)
            .map(|i| format!("김{}", "철수영희".chars().nth(i % 4).unwrap()).repeat(1 + i / 4))
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let s = store(&refs);
        let d = doc("d", "<<<내국인이름>>>A<<</내국인이름>>>");
        let single = plan(ReplacementMode::Single, 30);
        let a = build_instance(&d, vocab(), &s, &single, 0).unwrap();
        for e in 1..30 {
            let b = build_instance(&d, vocab(), &s, &single, e).unwrap();
            assert_eq!((a.x.clone(), a.y.clone()), (b.x, b.y));
        }
        let per = plan(ReplacementMode::PerEpoch, 30);
        let xs: HashSet<Vec<u32>> = (0..30)
            .map(|e| build_instance(&d, vocab(), &s, &per, e).unwrap().x)
            .collect();
        // Independent enumeration of the underlying draws.
        let draws: HashSet<String> = (0..30)
            .map(|e| s.sample("내국인이름", 1200, draw_index("d", 0, e)).unwrap())
            .collect();
        assert!(draws.len() >= 2);
        assert_eq!(xs.len(), draws.len());
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..4500).map(|i| format!("doc{i}")).collect();
        let (t, v) = split_documents(ids.iter().map(String::as_str), 1200, 0.8).unwrap();
        assert_eq!((t.len(), v.len()), (3600, 900));
        let mut rev = ids.clone();
        rev.reverse();
        let (t2, _) = split_documents(rev.iter().map(String::as_str), 1200, 0.8).unwrap();
        assert_eq!(t, t2);
        assert!(matches!(
            split_documents(["a"], 1, 1.0),
            Err(DatagenError::InvalidSplit(_))
        ));
        assert!(matches!(
            split_documents(["a", "a"], 1, 0.5),
            Err(DatagenError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn single_document_goes_to_train_with_warning() {
        let d = vec![doc("only", "피고인")];
        let ds = generate_dataset(
            &d,
            &plan(ReplacementMode::Single, 1),
            vocab(),
            &store(&["홍길동"]),
            0.8,
            DEFAULT_WINDOW,
        )
        .unwrap();
        assert_eq!(ds.train.len(), 1);
        assert!(ds.validation.is_empty());
        assert_eq!(ds.warnings, vec!["validation split is empty".to_string()]);
        assert!(matches!(
            generate_dataset(
                &d,
                &plan(ReplacementMode::Single, 0),
                vocab(),
                &store(&[]),
                0.8,
                10
            ),
            Err(DatagenError::InvalidPlan(_))
        ));
    }

    #[test]
    fn output_files_are_reproducible() {
        let docs: Vec<AnnotatedDocument> = (0..10)
            .map(|i| {
                doc(
                    &format!("d{i}"),
                    "피고인 <<<내국인이름>>>A<<</내국인이름>>>는 B",
                )
            })
            .collect();
        let s = store(&["홍길동", "김철수", "영희"]);
        let p = plan(ReplacementMode::PerEpoch, 3);
        let hashes = || OutputHashes {
            taxonomy: "t",
            vocab: "v",
            store: "s",
        };
        let run = |dir: &Path| {
            let ds = generate_dataset(&docs, &p, vocab(), &s, 0.8, DEFAULT_WINDOW).unwrap();
            write_dataset(dir, &ds, &p, 0.8, DEFAULT_WINDOW, false, hashes()).unwrap();
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(a.path());
        run(b.path());
        for f in [TRAIN_FILE, VALIDATION_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
        let train = read_instances(a.path().join(TRAIN_FILE)).unwrap();
        assert_eq!(train.len(), 8 * 3);
        let epochs: HashSet<u32> = train.iter().map(|i| i.epoch).collect();
        assert_eq!(epochs, (0..3).collect());
        let val = read_instances(a.path().join(VALIDATION_FILE)).unwrap();
        assert!(val.iter().all(|i| i.epoch == 0));
    }

    #[test]
    fn windowing_never_cuts_a_span() {
        let v = vocab();
        let d = doc("d", "AB<<<내국인이름>>>A<<</내국인이름>>>BA");
        let inst = build_instance(
            &d,
            v,
            &store(&["김철수"]),
            &plan(ReplacementMode::Single, 1),
            0,
        )
        .unwrap();
        assert_eq!(inst.x.len(), 7);
        let chunks = split_window(inst.clone(), 4).unwrap();
        let lens: Vec<usize> = chunks.iter().map(|c| c.x.len()).collect();
        assert_eq!(lens, vec![2, 4, 1]);
        assert_eq!(chunks[1].spans[0].start, 0);
        assert!(matches!(
            split_window(inst, 2),
            Err(DatagenError::SpanExceedsWindow { len: 3, .. })
        ));
    }

    fn arb_doc() -> impl Strategy<Value = Vec<Segment>> {
        let labels = ["내국인이름", "식당"];
        prop::collection::vec(
            prop_oneof![
                "[피고인이는 AB]{1,6}".prop_map(Segment::Plain),
                (0..2usize).prop_map(move |i| Segment::Entity {
                    label: labels[i].to_string(),
                    placeholder: "A".into()
                }),
            ],
            0..10,
        )
    }

    proptest! {
        #[test]
        fn alignment_and_label_conservation(segs in arb_doc(), epoch in 0u32..5, window in 3usize..12) {
            let mut s = store(&["홍길동", "김철수"]);
            s.insert_mentions("식당", ["식당", "교회 식당"]).unwrap();
            let d = AnnotatedDocument::new("p", segs);
            let inst = build_instance(&d, vocab(), &s, &plan(ReplacementMode::PerEpoch, 5), epoch).unwrap();
            prop_assert_eq!(inst.x.len(), inst.y.len());
            prop_assert!(inst.x.iter().all(|&id| !vocab().is_special(id)));
            prop_assert_eq!(inst.spans.len(), d.entity_count());
            // Brute-force rescan: every non-O position lies in exactly one span of that label.
            for (k, l) in inst.y.iter().enumerate() {
                let covering: Vec<&SpanInfo> = inst.spans.iter().filter(|s| s.start <= k && k < s.end).collect();
                if l == "O" {
                    prop_assert!(covering.is_empty());
                } else {
                    prop_assert_eq!(covering.len(), 1);
                    prop_assert_eq!(&covering[0].label, l);
                }
            }
            let st = instance_stats([&inst]);
            let tokens: u64 = st.per_label.values().map(|s| s.tokens).sum();
            prop_assert_eq!(tokens as usize, inst.y.iter().filter(|l| *l != "O").count());
            if let Ok(chunks) = split_window(inst.clone(), window) {
                let x: Vec<u32> = chunks.iter().flat_map(|c| c.x.clone()).collect();
                prop_assert_eq!(x, inst.x.clone());
                prop_assert!(chunks.iter().all(|c| c.x.len() <= window));
                let spans: usize = chunks.iter().map(|c| c.spans.len()).sum();
                prop_assert_eq!(spans, inst.spans.len());
            }
        }
    }
}
