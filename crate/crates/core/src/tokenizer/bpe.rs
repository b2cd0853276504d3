//! Byte-pair encoding over pre-tokenized chunks.
//!
//! Training starts from single characters and repeatedly merges the most
//! frequent adjacent pair. Frequency ties go to the pair whose merged string
//! is smallest, then to the smaller left symbol. Training stops at the
//! requested vocabulary size or when no pair occurs at least twice.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BpeError {
    #[error("training corpus is empty")]
    CorpusEmpty,
    #[error("vocabulary size {requested} is below the alphabet size {alphabet}")]
    VocabTooSmall { requested: usize, alphabet: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeModel {
    /// Single-character symbols, sorted.
    pub alphabet: Vec<String>,
    /// Merges in priority order.
    pub merges: Vec<(String, String)>,
}

/// Trains on `words`, each an indivisible chunk. `vocab_size` counts the
/// alphabet plus one entry per merge.
pub fn train_bpe<'a, I>(words: I, vocab_size: usize) -> Result<BpeModel, BpeError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for w in words {
        if !w.is_empty() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(BpeError::CorpusEmpty);
    }
    let alphabet: BTreeSet<String> = counts
        .keys()
        .flat_map(|w| w.chars())
        .map(String::from)
        .collect();
    if vocab_size < alphabet.len() {
        return Err(BpeError::VocabTooSmall {
            requested: vocab_size,
            alphabet: alphabet.len(),
        });
    }

    // Symbols are interned; words hold symbol ids.
    let mut symbols: Vec<String> = alphabet.iter().cloned().collect();
    let index: HashMap<String, u32> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let mut interned: HashMap<String, u32> = index;
    let mut words: Vec<(Vec<u32>, u64)> = {
        let mut v: Vec<(&str, u64)> = counts.into_iter().collect();
        v.sort_unstable();
        v.into_iter()
            .map(|(w, c)| {
                let ids = w
                    .chars()
                    .map(|ch| interned[ch.to_string().as_str()])
                    .collect();
                (ids, c)
            })
            .collect()
    };

    let mut merges = Vec::new();
    while alphabet.len() + merges.len() < vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (ids, c) in &words {
            for p in ids.windows(2) {
                *pairs.entry((p[0], p[1])).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&(_, f)| f >= 2)
            .max_by(|&(a, fa), &(b, fb)| {
                fa.cmp(&fb).then_with(|| {
                    let ka = (concat(&symbols, a), &symbols[a.0 as usize]);
                    let kb = (concat(&symbols, b), &symbols[b.0 as usize]);
                    kb.cmp(&ka)
                })
            });
        let Some(((l, r), _)) = best else { break };
        let merged = concat(&symbols, (l, r));
        let id = *interned.entry(merged.clone()).or_insert_with(|| {
            symbols.push(merged);
            (symbols.len() - 1) as u32
        });
        for (ids, _) in words.iter_mut() {
            merge_in_place(ids, l, r, id);
        }
        merges.push((symbols[l as usize].clone(), symbols[r as usize].clone()));
    }
    Ok(BpeModel {
        alphabet: alphabet.into_iter().collect(),
        merges,
    })
}

fn concat(symbols: &[String], (l, r): (u32, u32)) -> String {
    let mut s = symbols[l as usize].clone();
    s.push_str(&symbols[r as usize]);
    s
}

/// Replaces non-overlapping occurrences of `(l, r)`, scanning left to right.
pub(crate) fn merge_in_place<T: Copy + PartialEq>(ids: &mut Vec<T>, l: T, r: T, merged: T) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

/// Applies ranked merges to a symbol sequence: the lowest-ranked adjacent
/// pair is merged everywhere, until none applies.
pub(crate) fn apply_merges(ids: &mut Vec<u32>, ranks: &HashMap<(u32, u32), (usize, u32)>) {
    loop {
        let best = ids
            .windows(2)
            .filter_map(|p| {
                ranks
                    .get(&(p[0], p[1]))
                    .map(|&(rank, id)| (rank, p[0], p[1], id))
            })
            .min();
        let Some((_, l, r, id)) = best else { break };
        merge_in_place(ids, l, r, id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn two_merges_on_aaabaaab() {
        let m = train_bpe(["aaabaaab"], 4).unwrap();
        assert_eq!(m.alphabet, vec!["a", "b"]);
        assert_eq!(m.merges, vec![pair("a", "a"), pair("aa", "a")]);
    }

    #[test]
    fn alphabet_sized_budget_means_no_merges() {
        let m = train_bpe(["aaabaaab"], 2).unwrap();
        assert!(m.merges.is_empty());
        assert_eq!(
            train_bpe(["aaabaaab"], 1),
            Err(BpeError::VocabTooSmall {
                requested: 1,
                alphabet: 2
            })
        );
        assert_eq!(train_bpe([], 10), Err(BpeError::CorpusEmpty));
        assert_eq!(train_bpe([""], 10), Err(BpeError::CorpusEmpty));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = train_bpe(["abc"], 100).unwrap();
        assert!(m.merges.is_empty());
    }

    /// Direct pair-frequency recount on plain strings, independent of the
    /// interned implementation.
    fn oracle(words: &[&str], vocab_size: usize) -> Vec<(String, String)> {
        let mut seqs: Vec<Vec<String>> = words
            .iter()
            .map(|w| w.chars().map(String::from).collect())
            .collect();
        let alpha: BTreeSet<char> = words.iter().flat_map(|w| w.chars()).collect();
        let mut merges = Vec::new();
        while alpha.len() + merges.len() < vocab_size {
            let mut freq: Vec<((String, String), u64)> = Vec::new();
            for s in &seqs {
                for w in s.windows(2) {
                    let p = (w[0].clone(), w[1].clone());
                    match freq.iter_mut().find(|(q, _)| *q == p) {
                        Some((_, f)) => *f += 1,
                        None => freq.push((p, 1)),
                    }
                }
            }
            let top = freq.iter().map(|(_, f)| *f).max().unwrap_or(0);
            if top < 2 {
                break;
            }
            let (l, r) = freq
                .iter()
                .filter(|(_, f)| *f == top)
                .map(|(p, _)| p.clone())
                .min_by_key(|(l, r)| (format!("{l}{r}"), l.clone()))
                .unwrap();
            for s in seqs.iter_mut() {
                let mut out = Vec::new();
                let mut i = 0;
                while i < s.len() {
                    if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                        out.push(format!("{l}{r}"));
                        i += 2;
                    } else {
                        out.push(s[i].clone());
                        i += 1;
                    }
                }
                *s = out;
            }
            merges.push((l, r));
        }
        merges
    }

    proptest! {
        #[test]
        fn training_matches_recount_oracle(
            words in prop::collection::vec("[abc가나]{1,8}", 1..12),
            extra in 0usize..12,
        ) {
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let alpha: BTreeSet<char> = refs.iter().flat_map(|w| w.chars()).collect();
            let size = alpha.len() + extra;
            let got = train_bpe(refs.iter().copied(), size).unwrap();
            prop_assert_eq!(got.merges, oracle(&refs, size));
        }

        #[test]
        fn training_is_deterministic(words in prop::collection::vec("[ab ]{1,6}", 1..10)) {
            let a = train_bpe(words.iter().map(String::as_str), 20).unwrap();
            let mut rev = words.clone();
            rev.reverse();
            let b = train_bpe(rev.iter().map(String::as_str), 20).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
