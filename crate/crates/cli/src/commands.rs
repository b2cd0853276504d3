use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use deid_core::anonymizer::{
    anonymize as anonymize_text, document_spans, tagged_tokens_to_spans, AnonymizationPolicy,
    LabeledSpan, LedgerEntry,
};
use deid_core::datagen::{
    generate_dataset, instance_stats, read_instances, strip_bio, write_dataset, OutputHashes,
    ReplacementPlan,
};
use deid_core::markup::{read_corpus, read_corpus_records, CorpusRecord};
use deid_core::metrics::{ConfusionCounts, MetricReport};
use deid_core::store::{shipped_store_path, ReplacementStore};
use deid_core::tagger::{
    default_priority, read_predictions, tag as tag_checked, tag_all, write_predictions,
    write_requests, Gazetteer, InstanceKey, LookupTagger, TagRequest, Tagger,
};
use deid_core::tokenizer::{normalize, MorphDict};
use deid_core::{AnnotatedDocument, Taxonomy, Vocabulary};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::{AnonymizeArgs, EvalArgs, GenArgs, MeanArgs, TagArgs, TokenizerCmd};

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    cfg: PipelineConfig,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        Context { cfg }
    }

    fn taxonomy(&self) -> Result<Taxonomy> {
        match &self.cfg.paths.taxonomy {
            Some(p) => {
                Taxonomy::load(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
            }
            None => Ok(Taxonomy::shipped()),
        }
    }

    fn store(&self, taxonomy: &Taxonomy) -> Result<ReplacementStore> {
        let path = self
            .cfg
            .paths
            .store
            .clone()
            .unwrap_or_else(shipped_store_path);
        let store = ReplacementStore::load(&path, taxonomy)?;
        for w in store.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(store)
    }

    fn dict(&self) -> Result<MorphDict> {
        match &self.cfg.paths.dictionary {
            Some(p) => Ok(MorphDict::load(p)?),
            None => Ok(MorphDict::shipped()),
        }
    }

    fn vocab_path(&self) -> Option<&Path> {
        self.cfg.paths.vocab.as_deref()
    }

    fn vocab(&self, taxonomy: &Taxonomy) -> Result<Vocabulary> {
        let path = self.vocab_path().ok_or_else(|| {
            CliError::input("no vocabulary directory given (--vocab or paths.vocab)")
        })?;
        let vocab = Vocabulary::load(path)?;
        check_vocab(&vocab, taxonomy)?;
        Ok(vocab)
    }

    fn policy(&self, taxonomy: &Taxonomy) -> Result<AnonymizationPolicy> {
        match &self.cfg.paths.policy {
            Some(p) => Ok(AnonymizationPolicy::load(p, taxonomy)?),
            None => Ok(AnonymizationPolicy::shipped(taxonomy)?),
        }
    }

    fn strict(&self, warnings: usize) -> Result<()> {
        if self.cfg.flags.strict && warnings > 0 {
            Err(CliError::Strict(warnings))
        } else {
            Ok(())
        }
    }
}

fn check_vocab(vocab: &Vocabulary, taxonomy: &Taxonomy) -> Result<()> {
    if vocab.matches_taxonomy(taxonomy) {
        Ok(())
    } else {
        Err(CliError::contract(
            "vocabulary marker block does not match the taxonomy labels",
        ))
    }
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| CliError::input(format!("no {what} given")))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).expect("record serializes");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).expect("value serializes");
    json.push('\n');
    fs::write(path, json).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn taxonomy_check(ctx: &Context) -> Result<()> {
    let t = ctx.taxonomy()?;
    let c = t.tier_counts();
    println!("{}/{}/{}", c.main, c.sub, c.granular);
    println!("{c}");
    Ok(())
}

pub fn parse(ctx: &Context, corpus: Option<PathBuf>) -> Result<()> {
    let t = ctx.taxonomy()?;
    let path = required(corpus.or_else(|| ctx.cfg.paths.corpus.clone()), "corpus")?;
    let records = read_corpus_records(&path)?;
    let mut per_label: BTreeMap<String, usize> = BTreeMap::new();
    let mut entities = 0;
    let mut non_canonical = 0;
    for r in &records {
        let doc = AnnotatedDocument::parse(r.doc_id.clone(), &r.text, &t)
            .map_err(|e| CliError::input(format!("document {}: {e}", r.doc_id)))?;
        for span in doc.entity_spans() {
            *per_label.entry(span.label.to_string()).or_default() += 1;
        }
        entities += doc.entity_count();
        if doc.serialize() != r.text {
            eprintln!(
                "warning: document {} is not in canonical escaped form",
                r.doc_id
            );
            non_canonical += 1;
        }
    }
    println!("{} documents, {} entities", records.len(), entities);
    for (label, n) in &per_label {
        println!("{label}\t{n}");
    }
    ctx.strict(non_canonical)
}

pub fn store_check(ctx: &Context) -> Result<()> {
    let t = ctx.taxonomy()?;
    let store = ctx.store(&t)?;
    let report = store.coverage();
    print!("{report}");
    let below = report.below_target().count();
    if below > 0 {
        eprintln!(
            "warning: {below} labels below the {}-mention target",
            report.target
        );
    }
    ctx.strict(store.warnings().len() + below)
}

pub fn tokenizer(ctx: &Context, cmd: TokenizerCmd) -> Result<()> {
    let t = ctx.taxonomy()?;
    match cmd {
        TokenizerCmd::Train {
            corpus,
            lines,
            vocab_size,
            out,
        } => {
            let mut text = Vec::new();
            if let Some(c) = corpus.or_else(|| ctx.cfg.paths.corpus.clone()) {
                text.extend(read_corpus_records(c)?.into_iter().map(|r| r.text));
            }
            if let Some(l) = lines {
                let body = fs::read_to_string(&l)
                    .map_err(|e| CliError::input(format!("{}: {e}", l.display())))?;
                text.extend(body.lines().map(str::to_string));
            }
            if text.is_empty() {
                return Err(CliError::input(
                    "no training text (give --corpus or --lines)",
                ));
            }
            let size = vocab_size.unwrap_or(ctx.cfg.tokenizer.vocab_size);
            let vocab = Vocabulary::train(text.iter().map(String::as_str), ctx.dict()?, &t, size)?;
            vocab.save(&out)?;
            print_vocab_summary(&vocab, &out);
            Ok(())
        }
        TokenizerCmd::Encode { text, offsets } => {
            let vocab = ctx.vocab(&t)?;
            let inputs: Vec<String> = match text {
                Some(s) => vec![s],
                None => std::io::stdin()
                    .lock()
                    .lines()
                    .collect::<std::io::Result<_>>()?,
            };
            for line in inputs {
                let seq = vocab.encode(&line);
                if offsets {
                    for (id, (a, b)) in seq.ids.iter().zip(&seq.offsets) {
                        let tok = vocab.token_str(*id).unwrap_or_default();
                        println!("{id}\t{a}\t{b}\t{tok}");
                    }
                } else {
                    let ids: Vec<String> = seq.ids.iter().map(u32::to_string).collect();
                    println!("{}", ids.join(" "));
                }
            }
            Ok(())
        }
        TokenizerCmd::Decode { ids } => {
            let vocab = ctx.vocab(&t)?;
            println!("{}", vocab.decode(&ids)?);
            Ok(())
        }
    }
}

fn print_vocab_summary(vocab: &Vocabulary, dir: &Path) {
    println!(
        "vocabulary written to {}: {} tokens ({} merges), markers {}..{}, hash {}",
        dir.display(),
        vocab.len(),
        vocab.merges().len(),
        vocab.special_base(),
        vocab.special_base() as usize + vocab.special_count(),
        vocab.content_hash()
    );
}

pub fn gen(ctx: &Context, args: GenArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let corpus_path = required(
        args.corpus.or_else(|| cfg.paths.corpus.clone()),
        "corpus (--corpus)",
    )?;
    let out = required(
        args.out.or_else(|| cfg.paths.output.clone()),
        "output directory (--out)",
    )?;
    let plan = ReplacementPlan {
        mode: args.mode.map(Into::into).unwrap_or(cfg.plan.mode),
        epochs: args.epochs.unwrap_or(cfg.plan.epochs),
        seed: args.seed.unwrap_or(cfg.plan.seed),
    };
    let split = args.split.unwrap_or(cfg.plan.split);
    let window = args.window.unwrap_or(cfg.tokenizer.window);
    let bio = args.bio || cfg.flags.bio;

    let t = ctx.taxonomy()?;
    let store = ctx.store(&t)?;
    let corpus = read_corpus(&corpus_path, &t)?;
    let vocab = if ctx.vocab_path().is_some() {
        ctx.vocab(&t)?
    } else {
        let size = args.vocab_size.unwrap_or(cfg.tokenizer.vocab_size);
        let lines: Vec<String> = corpus.iter().map(AnnotatedDocument::serialize).collect();
        let vocab = Vocabulary::train(lines.iter().map(String::as_str), ctx.dict()?, &t, size)?;
        let dir = out.join("vocab");
        vocab.save(&dir)?;
        print_vocab_summary(&vocab, &dir);
        vocab
    };

    let ds = generate_dataset(&corpus, &plan, &vocab, &store, split, window)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    ctx.strict(ds.warnings.len() + store.warnings().len())?;
    let manifest = write_dataset(
        &out,
        &ds,
        &plan,
        split,
        window,
        bio,
        OutputHashes {
            taxonomy: &t.content_hash(),
            vocab: &vocab.content_hash(),
            store: &store.content_hash(),
        },
    )?;
    println!(
        "{} documents: {} train, {} validation (seed {})",
        corpus.len(),
        ds.train_docs.len(),
        ds.validation_docs.len(),
        plan.seed
    );
    println!(
        "{} train instances, {} validation instances",
        manifest.train_instances, manifest.validation_instances
    );
    let stats = instance_stats(ds.train.iter().chain(&ds.validation));
    println!("{} tokens", stats.tokens);
    for (label, s) in &stats.per_label {
        println!("{label}\t{} tokens\t{} spans", s.tokens, s.spans);
    }
    for (file, hash) in &manifest.files {
        println!("{file}\t{hash}");
    }
    Ok(())
}

pub fn tag(ctx: &Context, args: TagArgs) -> Result<()> {
    let t = ctx.taxonomy()?;
    let dataset = read_instances(&args.dataset)?;
    let choice = &args.tagger;
    if choice.exchange {
        if let Some(req) = &args.requests {
            write_requests(req, &dataset)?;
            println!("{} requests written to {}", dataset.len(), req.display());
            return Ok(());
        }
    }
    let out = required(args.out, "prediction output (--out)")?;
    let tagger: Box<dyn Tagger> = if choice.oracle {
        Box::new(LookupTagger::oracle(&dataset))
    } else if choice.gazetteer {
        let vocab = ctx.vocab(&t)?;
        let store = ctx.store(&t)?;
        Box::new(Gazetteer::build(&store, &vocab, &default_priority(&t)))
    } else {
        let path = required(
            args.predictions,
            "prediction file (--predictions or --requests)",
        )?;
        let lookup = LookupTagger::from_predictions(read_predictions(&path)?)?;
        let keys: BTreeSet<InstanceKey> = dataset.iter().map(|i| i.key()).collect();
        if keys.len() != lookup.len() {
            return Err(CliError::contract(format!(
                "{} has {} predictions for {} dataset instances",
                path.display(),
                lookup.len(),
                keys.len()
            )));
        }
        Box::new(lookup)
    };
    let preds = tag_all(tagger.as_ref(), &dataset, &t)?;
    write_predictions(&out, &preds)?;
    println!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let gold = read_instances(&args.gold)?;
    let preds = read_predictions(&args.pred)?;
    let mut by_key = BTreeMap::new();
    for p in preds {
        let key = InstanceKey {
            doc_id: p.doc_id.clone(),
            epoch: p.epoch,
            chunk: p.chunk,
        };
        if by_key.insert(key.clone(), p.y_pred).is_some() {
            return Err(CliError::input(format!("duplicate prediction for {key}")));
        }
    }
    let gold_keys: BTreeSet<InstanceKey> = gold.iter().map(|g| g.key()).collect();
    let missing: Vec<String> = gold_keys
        .iter()
        .filter(|k| !by_key.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    let extra: Vec<String> = by_key
        .keys()
        .filter(|k| !gold_keys.contains(k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let first = missing.first().or(extra.first()).expect("non-empty");
        return Err(CliError::contract(format!(
            "files do not match: {} gold instances without prediction, {} predictions without gold (first: {first})",
            missing.len(),
            extra.len()
        )));
    }
    let convention = args
        .fp_convention
        .map(Into::into)
        .unwrap_or(ctx.cfg.flags.fp_convention);
    let mut counts = ConfusionCounts::new(convention);
    for g in &gold {
        let key = g.key();
        let gy: Vec<&str> = g.y.iter().map(|l| strip_bio(l)).collect();
        let py: Vec<&str> = by_key[&key].iter().map(|l| strip_bio(l)).collect();
        counts
            .accumulate(&gy, &py)
            .map_err(|e| CliError::contract(format!("{key}: {e}")))?;
    }
    let report = counts.report();
    println!("{report}");
    println!("{}", MetricReport::TABLE_HEADER);
    println!("{}", report.table_row(&args.name));
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn mean(args: MeanArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let r: MetricReport = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    let m = MetricReport::mean(&reports)?;
    println!("{}", MetricReport::TABLE_HEADER);
    println!("{}", m.table_row(&args.name));
    if let Some(path) = &args.json {
        write_json(path, &m)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LedgerRecord<'a> {
    doc_id: &'a str,
    entries: &'a [LedgerEntry],
}

enum SpanSource {
    Markup,
    Gazetteer(Vocabulary, Gazetteer),
    Predictions(Vocabulary, LookupTagger),
}

pub fn anonymize(ctx: &Context, args: AnonymizeArgs) -> Result<()> {
    let t = ctx.taxonomy()?;
    let mut policy = ctx.policy(&t)?;
    if args.no_particle_adjust || ctx.cfg.flags.no_particle_adjust {
        policy.adjust_particles = false;
    }
    let source = if args.gazetteer {
        let vocab = ctx.vocab(&t)?;
        let g = Gazetteer::build(&ctx.store(&t)?, &vocab, &default_priority(&t));
        SpanSource::Gazetteer(vocab, g)
    } else if let Some(p) = &args.predictions {
        let vocab = ctx.vocab(&t)?;
        SpanSource::Predictions(vocab, LookupTagger::from_predictions(read_predictions(p)?)?)
    } else {
        SpanSource::Markup
    };

    let records = read_corpus_records(&args.input)?;
    let mut outputs = Vec::with_capacity(records.len());
    let mut ledgers = Vec::with_capacity(records.len());
    for r in &records {
        let (text, spans): (String, Vec<LabeledSpan>) = match &source {
            SpanSource::Markup => {
                let doc = AnnotatedDocument::parse(r.doc_id.clone(), &r.text, &t)
                    .map_err(|e| CliError::input(format!("document {}: {e}", r.doc_id)))?;
                document_spans(&doc)
            }
            SpanSource::Gazetteer(vocab, g) => {
                let text = normalize(&r.text);
                let seq = vocab.encode(&text);
                let y = g.tag_ids(&seq.ids);
                let spans = tagged_tokens_to_spans(&y, &seq.offsets)?;
                (text, spans)
            }
            SpanSource::Predictions(vocab, lookup) => {
                let text = normalize(&r.text);
                let seq = vocab.encode(&text);
                let key = InstanceKey {
                    doc_id: r.doc_id.clone(),
                    epoch: 0,
                    chunk: 0,
                };
                let y = tag_checked(
                    lookup,
                    TagRequest {
                        key: &key,
                        x: &seq.ids,
                    },
                    &t,
                )?;
                let spans = tagged_tokens_to_spans(&y, &seq.offsets)?;
                (text, spans)
            }
        };
        let doc = anonymize_text(&text, &spans, &policy)
            .map_err(|e| CliError::contract(format!("document {}: {e}", r.doc_id)))?;
        outputs.push(CorpusRecord {
            doc_id: r.doc_id.clone(),
            text: doc.text,
        });
        ledgers.push(doc.ledger);
    }
    write_jsonl(&args.out, &outputs)?;
    if let Some(path) = &args.ledger {
        write_jsonl(
            path,
            records.iter().zip(&ledgers).map(|(r, l)| LedgerRecord {
                doc_id: &r.doc_id,
                entries: l,
            }),
        )?;
    }
    let replaced: usize = ledgers.iter().map(Vec::len).sum();
    println!("{} documents, {} spans replaced", records.len(), replaced);
    Ok(())
}
