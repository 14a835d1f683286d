//! Inference-time sentence selection and corpus-level evaluation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::{DocBundle, Model};
use crate::oracle::greedy_oracle;
use crate::rouge::{concat_refs, rouge_l, rouge_n, stem_tokens, RougeScore};
use crate::tape::Tape;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryResult {
    pub id: String,
    /// Selected sentence indices in document order.
    pub indices: Vec<usize>,
    pub summary: Vec<String>,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

/// Top-k sentence indices by score, ties to the lower index, returned in
/// document order. With trigram blocking on, a candidate sharing any
/// trigram with the running selection is skipped (possibly leaving fewer
/// than k picks).
pub fn select_sentences(
    scores: &[f64],
    k: usize,
    doc: &Document,
    trigram_blocking: bool,
) -> Vec<usize> {
    assert!(k >= 1, "selection budget must be at least 1");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut picked = Vec::new();
    let mut seen_trigrams: HashSet<&[String]> = HashSet::new();
    for &i in &order {
        if picked.len() == k {
            break;
        }
        if trigram_blocking {
            let toks = &doc.sentences[i];
            let blocked = toks.windows(3).any(|w| seen_trigrams.contains(w));
            if blocked {
                continue;
            }
            seen_trigrams.extend(toks.windows(3));
        }
        picked.push(i);
    }
    picked.sort_unstable();
    picked
}

fn score_selection(doc: &Document, indices: &[usize], stem: bool) -> [RougeScore; 3] {
    let mut candidate: Vec<String> = Vec::new();
    for &i in indices {
        candidate.extend(doc.sentences[i].iter().cloned());
    }
    let reference = concat_refs(&doc.abstract_sentences);
    let (candidate, reference) = if stem {
        (stem_tokens(&candidate), stem_tokens(&reference))
    } else {
        (candidate, reference)
    };
    [
        rouge_n(&candidate, &reference, 1),
        rouge_n(&candidate, &reference, 2),
        rouge_l(&candidate, &reference),
    ]
}

/// Score one document with the model and select its summary.
pub fn summarize_doc(model: &Model, bundle: &DocBundle, k: usize, stem: bool) -> SummaryResult {
    let mut t = Tape::new();
    let out = model.forward(&mut t, bundle, None);
    let scores: Vec<f64> = t.value(out.scores).column(0).to_vec();
    let indices = select_sentences(&scores, k, &bundle.doc, model.config.trigram_blocking);
    let [rouge1, rouge2, rouge_l] = score_selection(&bundle.doc, &indices, stem);
    SummaryResult {
        id: bundle.id.clone(),
        summary: indices
            .iter()
            .map(|&i| bundle.doc.sentences[i].join(" "))
            .collect(),
        indices,
        rouge1,
        rouge2,
        rouge_l,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemRow {
    pub name: String,
    /// Mean f1 per metric with seeded bootstrap 95% intervals.
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub ci1: (f64, f64),
    pub ci2: (f64, f64),
    pub ci_l: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_docs: usize,
    pub k: usize,
    pub stem: bool,
    pub rows: Vec<SystemRow>,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&SystemRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} documents, k = {}, stemming {}\n{:<12} {:>8} {:>8} {:>8}   95% CI (R-1)\n",
            self.n_docs,
            self.k,
            if self.stem { "on" } else { "off" },
            "system",
            "R-1",
            "R-2",
            "R-L"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8.4} {:>8.4} {:>8.4}   [{:.4}, {:.4}]\n",
                r.name, r.rouge1, r.rouge2, r.rouge_l, r.ci1.0, r.ci1.1
            ));
        }
        out
    }
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

fn bootstrap_ci(values: &[f64], rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = values.len();
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let sum: f64 = (0..n).map(|_| values[rng.gen_range(0..n)]).sum();
        means.push(sum / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (means[25], means[974])
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn system_row(name: &str, per_doc: &[[RougeScore; 3]], seed: u64) -> SystemRow {
    let f1s: [Vec<f64>; 3] = [
        per_doc.iter().map(|r| r[0].f1).collect(),
        per_doc.iter().map(|r| r[1].f1).collect(),
        per_doc.iter().map(|r| r[2].f1).collect(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SystemRow {
        name: name.to_string(),
        rouge1: mean(&f1s[0]),
        rouge2: mean(&f1s[1]),
        rouge_l: mean(&f1s[2]),
        ci1: bootstrap_ci(&f1s[0], &mut rng),
        ci2: bootstrap_ci(&f1s[1], &mut rng),
        ci_l: bootstrap_ci(&f1s[2], &mut rng),
    }
}

/// Evaluate the model against LEAD-k and the greedy oracle on the same
/// documents with the same scorer.
pub fn evaluate(model: &Model, bundles: &[DocBundle], k: usize, stem: bool) -> Result<EvalReport> {
    if bundles.is_empty() {
        return Err(Error::Eval("no documents to evaluate".into()));
    }
    let per_doc: Vec<([RougeScore; 3], [RougeScore; 3], [RougeScore; 3])> = bundles
        .par_iter()
        .map(|bundle| {
            let doc = &bundle.doc;
            let model_scores = {
                let res = summarize_doc(model, bundle, k, stem);
                [res.rouge1, res.rouge2, res.rouge_l]
            };
            let lead: Vec<usize> = (0..doc.n_sentences().min(k)).collect();
            let lead_scores = score_selection(doc, &lead, stem);
            let oracle_idx: Vec<usize> = match &bundle.labels {
                Some(labels) => labels
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &l)| (l == 1).then_some(i))
                    .collect(),
                None => greedy_oracle(doc, model.config.oracle_max)
                    .labels
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &l)| (l == 1).then_some(i))
                    .collect(),
            };
            let oracle_scores = score_selection(doc, &oracle_idx, stem);
            (model_scores, lead_scores, oracle_scores)
        })
        .collect();

    let models: Vec<[RougeScore; 3]> = per_doc.iter().map(|d| d.0).collect();
    let leads: Vec<[RougeScore; 3]> = per_doc.iter().map(|d| d.1).collect();
    let oracles: Vec<[RougeScore; 3]> = per_doc.iter().map(|d| d.2).collect();
    let seed = model.config.seed;
    Ok(EvalReport {
        n_docs: bundles.len(),
        k,
        stem,
        rows: vec![
            system_row("model", &models, seed),
            system_row(&format!("lead-{k}"), &leads, seed),
            system_row("oracle", &oracles, seed),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_from(texts: &[&str], abstracts: &[&str]) -> Document {
        Document {
            id: "d".into(),
            sentences: texts
                .iter()
                .map(|s| s.split_whitespace().map(str::to_string).collect())
                .collect(),
            section_ids: vec![0; texts.len()],
            abstract_sentences: abstracts
                .iter()
                .map(|s| s.split_whitespace().map(str::to_string).collect())
                .collect(),
            oracle_labels: None,
        }
    }

    #[test]
    fn top_k_in_document_order() {
        let doc = doc_from(&["a b", "c d", "e f"], &["a b"]);
        assert_eq!(
            select_sentences(&[0.9, 0.1, 0.8], 2, &doc, false),
            vec![0, 2]
        );
    }

    #[test]
    fn ties_break_to_lower_index() {
        let doc = doc_from(&["a b", "c d"], &["a b"]);
        assert_eq!(select_sentences(&[0.5, 0.5], 1, &doc, false), vec![0]);
    }

    #[test]
    fn oversized_budget_selects_everything() {
        let doc = doc_from(&["a", "b", "c"], &["a"]);
        assert_eq!(select_sentences(&[0.1, 0.2, 0.3], 10, &doc, false), vec![0, 1, 2]);
    }

    #[test]
    fn trigram_blocking_skips_repeats() {
        let doc = doc_from(
            &["the cat sat down", "the cat sat up", "dogs bark loudly here"],
            &["x"],
        );
        // Second-ranked sentence repeats the trigram "the cat sat".
        let picked = select_sentences(&[0.9, 0.8, 0.7], 2, &doc, true);
        assert_eq!(picked, vec![0, 2]);
    }

    proptest! {
        #[test]
        fn selection_invariant_under_positive_affine(
            scores in proptest::collection::vec(0.0f64..1.0, 1..12),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
            k in 1usize..6,
        ) {
            let texts: Vec<String> = (0..scores.len()).map(|i| format!("tok{i}")).collect();
            let refs: Vec<&str> = vec!["tok0"];
            let doc = doc_from(
                &texts.iter().map(String::as_str).collect::<Vec<_>>(),
                &refs,
            );
            let base = select_sentences(&scores, k, &doc, false);
            let mapped: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
            prop_assert_eq!(base, select_sentences(&mapped, k, &doc, false));
        }
    }

    #[test]
    fn report_means_are_exact_arithmetic_means() {
        let docs = [
            doc_from(&["a b c", "d e f"], &["a b c"]),
            doc_from(&["x y", "a b"], &["x y z"]),
            doc_from(&["p q r s", "t u"], &["p q"]),
        ];
        let per_doc: Vec<[RougeScore; 3]> = docs
            .iter()
            .map(|d| score_selection(d, &[0], false))
            .collect();
        let row = system_row("m", &per_doc, 1);
        let manual: f64 = per_doc.iter().map(|r| r[0].f1).sum::<f64>() / 3.0;
        assert!((row.rouge1 - manual).abs() < 1e-12);
    }

    #[test]
    fn oracle_scores_match_oracle_selection_rescored() {
        let doc = doc_from(
            &["alpha beta gamma", "delta epsilon", "alpha beta"],
            &["alpha beta gamma"],
        );
        let labels = greedy_oracle(&doc, 3);
        let idx: Vec<usize> = labels
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == 1).then_some(i))
            .collect();
        let direct = score_selection(&doc, &idx, false);
        // Feeding the oracle picks back through the scorer is identical.
        let again = score_selection(&doc, &idx, false);
        assert_eq!(direct[0].f1, again[0].f1);
        assert!(direct[0].f1 > 0.99);
    }

    #[test]
    fn bootstrap_is_seeded_and_ordered() {
        let vals: Vec<f64> = (0..50).map(|i| f64::from(i) / 50.0).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = bootstrap_ci(&vals, &mut r1);
        let b = bootstrap_ci(&vals, &mut r2);
        assert_eq!(a, b);
        assert!(a.0 <= a.1);
        let m = mean(&vals);
        assert!(a.0 <= m && m <= a.1);
    }
}
