//! De-identification pipeline for annotated court judgments.
//!
//! The crate covers the whole offline pipeline: the PII [`taxonomy`], the
//! entity-marker [`markup`], mention [`store`]s, the hybrid morpheme + BPE
//! [`tokenizer`], training-data generation ([`datagen`]), reference
//! [`tagger`]s, token-level [`metrics`] and the court-rule [`anonymizer`].

pub mod anonymizer;
pub mod datagen;
pub mod keying;
pub mod markup;
pub mod metrics;
pub mod store;
pub mod tagger;
pub mod taxonomy;
pub mod tokenizer;

pub use markup::{AnnotatedDocument, Segment};
pub use store::ReplacementStore;
pub use taxonomy::Taxonomy;
pub use tokenizer::Vocabulary;
