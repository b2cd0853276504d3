//! Deterministic keys and RNG streams.
//!
//! Every random draw in the pipeline is derived from its logical coordinates
//! (seed, document, span, epoch) by hashing, never from a shared generator,
//! so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hasher(domain: &str) -> Sha256 {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h
}

fn update_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

/// Draw index for one entity span of one document in one epoch.
pub fn draw_index(doc_id: &str, span_ordinal: usize, epoch: u32) -> u64 {
    let mut h = hasher("deid/draw-index");
    update_str(&mut h, doc_id);
    h.update((span_ordinal as u64).to_le_bytes());
    h.update(epoch.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// RNG stream for sampling a mention of `label`.
pub fn mention_rng(seed: u64, label: &str, draw_index: u64) -> ChaCha8Rng {
    let mut h = hasher("deid/mention");
    h.update(seed.to_le_bytes());
    update_str(&mut h, label);
    h.update(draw_index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Sort key placing documents into the train/validation split.
pub fn split_key(seed: u64, doc_id: &str) -> [u8; 32] {
    let mut h = hasher("deid/split");
    h.update(seed.to_le_bytes());
    update_str(&mut h, doc_id);
    h.finalize().into()
}
