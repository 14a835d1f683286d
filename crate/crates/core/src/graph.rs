//! Per-document graph construction.
//!
//! Two structures are built for every document: a bipartite word-sentence
//! graph whose edges carry tf-idf weights (discretized into bins for a
//! learnable edge embedding), and a hypergraph with one hyperedge per
//! section connecting the sentences it contains.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, IdfTable, Vocabulary};
use crate::{Error, Result};

/// Fixed English stopword list shipped with the crate; filtering applies
/// to word nodes only, never to the text ROUGE sees.
pub fn stopword_set() -> &'static HashSet<&'static str> {
    use std::sync::OnceLock;
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        include_str!("../assets/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Number of discrete tf-idf bins for the edge-feature embedding.
    pub num_bins: usize,
    /// Width of each bin; weights at or above num_bins * bin_width share
    /// the top bin.
    pub bin_width: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            num_bins: 10,
            bin_width: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub sent: u32,
    pub word: u32,
    pub weight: f64,
    pub bin: u32,
}

/// Bipartite word-sentence graph for one document. Word nodes are keyed
/// by surface form (unique within the document, first-occurrence order);
/// `word_ids` maps them through the vocabulary for feature lookup, so
/// several out-of-vocabulary nodes may share the UNK id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub word_tokens: Vec<String>,
    pub word_ids: Vec<u32>,
    pub sent_count: usize,
    pub edges: Vec<Edge>,
}

impl HeteroGraph {
    pub fn word_count(&self) -> usize {
        self.word_tokens.len()
    }

    /// Distinct graph-bearing tokens per sentence (row degree).
    pub fn sentence_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.sent_count];
        for e in &self.edges {
            deg[e.sent as usize] += 1;
        }
        deg
    }

    pub fn validate(&self, num_bins: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.edges {
            if e.sent as usize >= self.sent_count || e.word as usize >= self.word_count() {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) out of range",
                    e.sent, e.word
                )));
            }
            if !seen.insert((e.sent, e.word)) {
                return Err(Error::Graph(format!(
                    "duplicate edge ({}, {})",
                    e.sent, e.word
                )));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!("bad edge weight {}", e.weight)));
            }
            if e.bin as usize >= num_bins {
                return Err(Error::Graph(format!("edge bin {} out of range", e.bin)));
            }
        }
        let mut tokens = HashSet::new();
        for t in &self.word_tokens {
            if !tokens.insert(t) {
                return Err(Error::Graph(format!("duplicate word node {t}")));
            }
        }
        Ok(())
    }
}

pub fn weight_bin(weight: f64, config: &GraphConfig) -> u32 {
    let b = (weight / config.bin_width).floor();
    (b.max(0.0) as usize).min(config.num_bins - 1) as u32
}

/// Build the word-sentence graph. Word nodes are the document's distinct
/// non-stopword tokens; if that set would be empty the stopword filter is
/// dropped for this document so every nonempty document gets nodes. Edge
/// weight is within-sentence relative frequency times training-split idf.
pub fn build_hetero_graph(
    doc: &Document,
    vocab: &Vocabulary,
    idf: &IdfTable,
    config: &GraphConfig,
) -> HeteroGraph {
    let stop = stopword_set();
    // Disable filtering entirely when the document is all stopwords.
    let filter = doc
        .sentences
        .iter()
        .flatten()
        .any(|t| !stop.contains(t.as_str()));
    let keep = |t: &str| !filter || !stop.contains(t);

    let mut word_tokens: Vec<String> = Vec::new();
    let mut word_index: HashMap<&str, u32> = HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();

    for (si, sent) in doc.sentences.iter().enumerate() {
        let mut counts: Vec<(&String, usize)> = Vec::new();
        let mut local: HashMap<&str, usize> = HashMap::new();
        for tok in sent {
            if !keep(tok) {
                continue;
            }
            match local.get(tok.as_str()) {
                Some(&pos) => counts[pos].1 += 1,
                None => {
                    local.insert(tok, counts.len());
                    counts.push((tok, 1));
                }
            }
        }
        for (tok, count) in counts {
            let wi = match word_index.get(tok.as_str()) {
                Some(&wi) => wi,
                None => {
                    let wi = word_tokens.len() as u32;
                    word_index.insert(tok.as_str(), wi);
                    word_tokens.push(tok.clone());
                    wi
                }
            };
            let tf = count as f64 / sent.len() as f64;
            let weight = tf * idf.idf(tok);
            edges.push(Edge {
                sent: si as u32,
                word: wi,
                weight,
                bin: weight_bin(weight, config),
            });
        }
    }

    let word_ids = word_tokens.iter().map(|t| vocab.id(t)).collect();
    HeteroGraph {
        word_tokens,
        word_ids,
        sent_count: doc.n_sentences(),
        edges,
    }
}

/// Section hypergraph: one hyperedge per distinct section id, each
/// containing that section's sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub n_nodes: usize,
    /// members[j] lists hyperedge j's sentence indices in ascending order.
    pub members: Vec<Vec<usize>>,
}

impl Hypergraph {
    pub fn n_edges(&self) -> usize {
        self.members.len()
    }

    /// Dense 0/1 incidence matrix, sentences x hyperedges.
    pub fn incidence_dense(&self) -> Array2<f64> {
        let mut h = Array2::zeros((self.n_nodes, self.n_edges()));
        for (j, mem) in self.members.iter().enumerate() {
            for &i in mem {
                h[(i, j)] = 1.0;
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let mut row_deg = vec![0usize; self.n_nodes];
        for (j, mem) in self.members.iter().enumerate() {
            if mem.is_empty() {
                return Err(Error::Graph(format!("hyperedge {j} is empty")));
            }
            for &i in mem {
                if i >= self.n_nodes {
                    return Err(Error::Graph(format!("hyperedge {j} member {i} out of range")));
                }
                row_deg[i] += 1;
            }
        }
        if let Some(i) = row_deg.iter().position(|&d| d == 0) {
            return Err(Error::Graph(format!("sentence {i} belongs to no hyperedge")));
        }
        Ok(())
    }
}

pub fn build_hypergraph(doc: &Document) -> Hypergraph {
    let n_sections = doc.n_sections();
    let mut members = vec![Vec::new(); n_sections];
    for (i, &s) in doc.section_ids.iter().enumerate() {
        members[s].push(i);
    }
    Hypergraph {
        n_nodes: doc.n_sentences(),
        members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assign_pseudo_sections, build_vocab, tokenize};
    use proptest::prelude::*;

    fn doc(sentences: &[&str]) -> Document {
        let sentences: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s)).collect();
        let n = sentences.len();
        Document {
            id: "t".into(),
            sentences,
            section_ids: vec![0; n],
            abstract_sentences: vec![],
            oracle_labels: None,
        }
    }

    fn idf_for(docs: &[Document]) -> IdfTable {
        IdfTable::build(docs.iter())
    }

    #[test]
    fn occurrence_structure() {
        let d = doc(&["cat sat", "cat ran"]);
        let vocab = build_vocab([&d], 100);
        let g = build_hetero_graph(&d, &vocab, &idf_for(std::slice::from_ref(&d)), &GraphConfig::default());
        assert_eq!(g.word_tokens, vec!["cat", "sat", "ran"]);
        let cat_edges: Vec<u32> = g
            .edges
            .iter()
            .filter(|e| g.word_tokens[e.word as usize] == "cat")
            .map(|e| e.sent)
            .collect();
        assert_eq!(cat_edges, vec![0, 1]);
        g.validate(10).unwrap();
    }

    #[test]
    fn tf_idf_arithmetic() {
        // One occurrence in a 4-token sentence with idf 2.0 gives 0.5.
        let tf = 1.0 / 4.0;
        let weight = tf * 2.0;
        assert_eq!(weight, 0.5);
        let cfg = GraphConfig::default();
        assert_eq!(weight_bin(weight, &cfg), 2);
        assert_eq!(weight_bin(0.0, &cfg), 0);
        assert_eq!(weight_bin(100.0, &cfg), 9);
    }

    #[test]
    fn edge_weights_match_hand_tf_idf() {
        // "rare" appears only in doc 0 of 4: idf = ln(4/2) = ln 2.
        let mut docs: Vec<Document> = (0..4).map(|_| doc(&["common filler words"])).collect();
        docs[0] = doc(&["rare common filler words"]);
        let idf = idf_for(&docs);
        let vocab = build_vocab(docs.iter(), 100);
        let g = build_hetero_graph(&docs[0], &vocab, &idf, &GraphConfig::default());
        let e = g
            .edges
            .iter()
            .find(|e| g.word_tokens[e.word as usize] == "rare")
            .unwrap();
        let expect = (1.0 / 4.0) * (4.0f64 / 2.0).ln();
        assert!((e.weight - expect).abs() < 1e-12);
    }

    #[test]
    fn stopwords_filtered_with_fallback() {
        let d = doc(&["the cat is on a mat", "it was the cat"]);
        let vocab = build_vocab([&d], 100);
        let g = build_hetero_graph(&d, &vocab, &idf_for(std::slice::from_ref(&d)), &GraphConfig::default());
        assert!(g.word_tokens.iter().all(|t| !stopword_set().contains(t.as_str())));
        assert_eq!(g.word_tokens, vec!["cat", "mat"]);

        let all_stop = doc(&["the of and", "it was"]);
        let g2 = build_hetero_graph(
            &all_stop,
            &vocab,
            &idf_for(std::slice::from_ref(&all_stop)),
            &GraphConfig::default(),
        );
        assert!(g2.word_count() >= 1);
        assert_eq!(g2.word_tokens.len(), 5);
    }

    #[test]
    fn oov_tokens_become_nodes_with_unk_id() {
        let known = doc(&["alpha beta"]);
        let vocab = build_vocab([&known], 100);
        let d = doc(&["alpha mystery enigma"]);
        let g = build_hetero_graph(&d, &vocab, &idf_for(std::slice::from_ref(&d)), &GraphConfig::default());
        assert_eq!(g.word_tokens, vec!["alpha", "mystery", "enigma"]);
        assert_eq!(g.word_ids[0], vocab.id("alpha"));
        assert_eq!(g.word_ids[1], crate::corpus::UNK);
        assert_eq!(g.word_ids[2], crate::corpus::UNK);
        g.validate(10).unwrap();
    }

    #[test]
    fn repeated_token_in_sentence_yields_single_edge_with_summed_tf() {
        let d = doc(&["echo echo delta"]);
        let vocab = build_vocab([&d], 100);
        let idf = idf_for(std::slice::from_ref(&d));
        let g = build_hetero_graph(&d, &vocab, &idf, &GraphConfig::default());
        let echo_edges: Vec<&Edge> = g
            .edges
            .iter()
            .filter(|e| g.word_tokens[e.word as usize] == "echo")
            .collect();
        assert_eq!(echo_edges.len(), 1);
        let expect = (2.0 / 3.0) * idf.idf("echo");
        assert!((echo_edges[0].weight - expect).abs() < 1e-12);
    }

    #[test]
    fn row_degree_equals_distinct_kept_tokens() {
        let d = doc(&["cat cat dog bird", "the dog"]);
        let vocab = build_vocab([&d], 100);
        let g = build_hetero_graph(&d, &vocab, &idf_for(std::slice::from_ref(&d)), &GraphConfig::default());
        assert_eq!(g.sentence_degrees(), vec![3, 1]);
    }

    #[test]
    fn hypergraph_from_sections() {
        let mut d = doc(&["a b", "c d", "e f"]);
        d.section_ids = vec![0, 0, 1];
        let h = build_hypergraph(&d);
        assert_eq!(h.members, vec![vec![0, 1], vec![2]]);
        let dense = h.incidence_dense();
        assert_eq!(
            dense,
            ndarray::array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        );
        h.validate().unwrap();
    }

    #[test]
    fn single_section_is_a_column_of_ones() {
        let d = doc(&["a b", "c d", "e f", "g h"]);
        let h = build_hypergraph(&d);
        assert_eq!(h.n_edges(), 1);
        assert_eq!(h.incidence_dense().sum(), 4.0);
    }

    #[test]
    fn pseudo_sections_chunk_into_hyperedges() {
        let mut d = doc(&["a b", "c d", "e f", "g h", "i j"]);
        d.section_ids = assign_pseudo_sections(5, 2);
        let h = build_hypergraph(&d);
        let sizes: Vec<usize> = h.members.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn section_columns_partition_sentences() {
        let mut d = doc(&["a b", "c d", "e f", "g h"]);
        d.section_ids = vec![0, 1, 1, 2];
        let h = build_hypergraph(&d);
        let dense = h.incidence_dense();
        for i in 0..4 {
            let row_sum: f64 = dense.row(i).sum();
            assert_eq!(row_sum, 1.0);
        }
    }

    proptest! {
        /// Permuting sentences (and relabeling structures consistently)
        /// permutes the graphs, nothing more.
        #[test]
        fn permutation_equivariance(perm_seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand_chacha::rand_core::SeedableRng;

            let base = ["cat sat mat", "dog ran far", "bird flew high", "fish swam deep"];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
            let mut order: Vec<usize> = (0..4).collect();
            order.shuffle(&mut rng);

            let mut d1 = doc(&base);
            d1.section_ids = vec![0, 0, 1, 1];
            let permuted: Vec<&str> = order.iter().map(|&i| base[i]).collect();
            let mut d2 = doc(&permuted);
            d2.section_ids = order.iter().map(|&i| d1.section_ids[i]).collect();
            // Renumber sections to first-appearance order for contiguity.
            let mut remap: HashMap<usize, usize> = HashMap::new();
            for s in d2.section_ids.iter_mut() {
                let next = remap.len();
                *s = *remap.entry(*s).or_insert(next);
            }

            let vocab = build_vocab([&d1], 100);
            let idf = idf_for(&[d1.clone()]);
            let cfg = GraphConfig::default();
            let g1 = build_hetero_graph(&d1, &vocab, &idf, &cfg);
            let g2 = build_hetero_graph(&d2, &vocab, &idf, &cfg);

            // Edge multisets agree after mapping sentence indices through
            // the permutation and word indices through surface forms.
            let canon = |g: &HeteroGraph, sent_map: &dyn Fn(usize) -> usize| {
                let mut set: Vec<(usize, String, i64)> = g
                    .edges
                    .iter()
                    .map(|e| (
                        sent_map(e.sent as usize),
                        g.word_tokens[e.word as usize].clone(),
                        (e.weight * 1e12).round() as i64,
                    ))
                    .collect();
                set.sort();
                set
            };
            // d2 row r holds original sentence order[r].
            prop_assert_eq!(canon(&g2, &|r| order[r]), canon(&g1, &|r| r));

            let h1 = build_hypergraph(&d1);
            let h2 = build_hypergraph(&d2);
            let mut cols1: Vec<Vec<usize>> = h1.members.clone();
            let mut cols2: Vec<Vec<usize>> = h2
                .members
                .iter()
                .map(|m| {
                    let mut v: Vec<usize> = m.iter().map(|&r| order[r]).collect();
                    v.sort();
                    v
                })
                .collect();
            cols1.sort();
            cols2.sort();
            prop_assert_eq!(cols1, cols2);
        }
    }
}
