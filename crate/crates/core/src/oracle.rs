//! Greedy search for gold extractive labels.
//!
//! Starting from the empty selection, each step adds the sentence that
//! most improves the mean of ROUGE-1 and ROUGE-2 f1 of the selection
//! (concatenated in document order) against the concatenated abstract.
//! The search stops when no sentence gives a positive gain or the
//! selection budget is exhausted.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::rouge::{concat_refs, rouge_n};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabels {
    /// One 0/1 flag per sentence.
    pub labels: Vec<u8>,
    /// Objective value of the final selection.
    pub achieved_score: f64,
    /// Sentence indices in the order the greedy search accepted them.
    pub selection_order: Vec<usize>,
    /// Objective value after each accepted step; strictly increasing.
    pub score_trace: Vec<f64>,
}

/// Mean of ROUGE-1 and ROUGE-2 f1 for a sorted selection of sentences.
pub fn selection_objective(doc: &Document, selected: &[usize], reference: &[String]) -> f64 {
    let cand: Vec<String> = selected
        .iter()
        .flat_map(|&i| doc.sentences[i].iter().cloned())
        .collect();
    let r1 = rouge_n(&cand, reference, 1).f1;
    let r2 = rouge_n(&cand, reference, 2).f1;
    (r1 + r2) / 2.0
}

pub fn greedy_oracle(doc: &Document, max_selected: usize) -> OracleLabels {
    let n = doc.n_sentences();
    assert!(n >= 1, "oracle requires at least one sentence");
    let mut labels = vec![0u8; n];
    let mut out = OracleLabels {
        labels: Vec::new(),
        achieved_score: 0.0,
        selection_order: Vec::new(),
        score_trace: Vec::new(),
    };

    let reference = concat_refs(&doc.abstract_sentences);
    if reference.is_empty() || max_selected == 0 {
        out.labels = labels;
        return out;
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut current = 0.0;
    while selected.len() < max_selected {
        let mut best: Option<(usize, f64)> = None;
        for (i, _) in labels.iter().enumerate().filter(|&(_, &l)| l == 0) {
            let mut trial = selected.clone();
            let pos = trial.partition_point(|&j| j < i);
            trial.insert(pos, i);
            let score = selection_objective(doc, &trial, &reference);
            // Strict comparison keeps the lowest index on ties.
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        match best {
            Some((i, score)) if score > current => {
                labels[i] = 1;
                let pos = selected.partition_point(|&j| j < i);
                selected.insert(pos, i);
                current = score;
                out.selection_order.push(i);
                out.score_trace.push(score);
            }
            _ => break,
        }
    }

    out.labels = labels;
    out.achieved_score = current;
    out
}
