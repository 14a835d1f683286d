//! Self-contained ROUGE-1/2/L over token sequences.
//!
//! N-gram variants use clipped multiset overlap; the L variant uses
//! longest-common-subsequence length. Multiple reference sequences are
//! scored against their concatenation (see [`concat_refs`]). All inputs
//! are pre-tokenized; an optional Porter stemming pass is provided for
//! comparability with stemmed reporting setups.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Multi-reference convention: score against the concatenated reference.
pub fn concat_refs(refs: &[Vec<String>]) -> Vec<String> {
    refs.iter().flatten().cloned().collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap: each candidate n-gram is credited at most as
/// often as it appears in the reference.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n == 1 || n == 2, "only unigram and bigram overlap supported");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::default();
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = candidate.len() - n + 1;
    let ref_total = reference.len() - n + 1;
    RougeScore::from_pr(matches as f64 / cand_total as f64, matches as f64 / ref_total as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // Rolling single-row DP; a is the shorter side to bound memory.
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for lt in long {
        for (j, st) in short.iter().enumerate() {
            curr[j + 1] = if lt == st {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// Longest-common-subsequence overlap: p = LCS/|candidate|, r = LCS/|reference|.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_len(candidate, reference) as f64;
    RougeScore::from_pr(lcs / candidate.len() as f64, lcs / reference.len() as f64)
}

/// Porter-stem every token; used behind an eval flag, never by default.
pub fn stem_tokens(tokens: &[String]) -> Vec<String> {
    use rust_stemmers::{Algorithm, Stemmer};
    let stemmer = Stemmer::create(Algorithm::English);
    tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect()
}
