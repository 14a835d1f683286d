//! Seeded synthetic corpus generator for tests and desk-scale runs.
//!
//! Each document hides a two-part selection rule. The opening sentence
//! is a title naming the document's dominant topic token, and one later
//! section carries a cue token in its first sentence. Summary-worthy
//! sentences are exactly the cue-section sentences containing the
//! dominant topic, and the abstract copies them verbatim. Spotting them
//! requires both the word graph (only a shared word node links a
//! sentence back to the title that names its topic) and section
//! membership (which section holds the cue), so dropping either graph
//! component leaves a systematic blind spot: secondary-topic sentences
//! inside the cue section and dominant-topic sentences outside it are
//! distractors, never summary-worthy.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::Document;
use crate::error::Result;

const BACKGROUND_TOKENS: usize = 400;
const TOPIC_TOKENS: usize = 50;
const CUE: &str = "cue";
const TITLE: &str = "title";

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub seed: u64,
    pub min_sections: usize,
    pub max_sections: usize,
    pub min_section_sentences: usize,
    pub max_section_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 100,
            seed: 0,
            min_sections: 3,
            max_sections: 5,
            min_section_sentences: 4,
            max_section_sentences: 6,
            min_tokens: 7,
            max_tokens: 12,
        }
    }
}

/// A generated document with the indices its abstract was copied from.
pub struct SynthDoc {
    pub doc: Document,
    pub key_indices: Vec<usize>,
}

fn background(rng: &mut ChaCha8Rng) -> String {
    format!("w{:03}", rng.gen_range(0..BACKGROUND_TOKENS))
}

fn topic(i: usize) -> String {
    format!("t{i:02}")
}

/// Insert `tok` at a random position of a background-token sentence.
fn plant(sentence: &mut Vec<String>, tok: &str, rng: &mut ChaCha8Rng) {
    let pos = rng.gen_range(0..=sentence.len());
    sentence.insert(pos, tok.to_string());
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<SynthDoc> {
    assert!(
        cfg.min_sections >= 2,
        "title and cue sections must be distinct"
    );
    assert!(cfg.min_section_sentences >= 2, "sections need a body sentence");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_docs).map(|i| generate_one(cfg, i, &mut rng)).collect()
}

fn generate_one(cfg: &SyntheticConfig, index: usize, rng: &mut ChaCha8Rng) -> SynthDoc {
    let n_sections = rng.gen_range(cfg.min_sections..=cfg.max_sections);
    let mut section_sizes = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        section_sizes.push(rng.gen_range(cfg.min_section_sentences..=cfg.max_section_sentences));
    }
    let total: usize = section_sizes.iter().sum();

    // Dominant topic plus two same-pool secondaries, all distinct. Token
    // identity carries no class information across documents; only the
    // title marks which topic dominates here.
    let mut picks: Vec<usize> = (0..TOPIC_TOKENS).collect();
    picks.shuffle(rng);
    let dominant = topic(picks[0]);
    let secondary = [topic(picks[1]), topic(picks[2])];

    let mut sentences: Vec<Vec<String>> = Vec::with_capacity(total);
    let mut section_ids = Vec::with_capacity(total);
    for (sec, &size) in section_sizes.iter().enumerate() {
        for _ in 0..size {
            let len = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
            sentences.push((0..len).map(|_| background(rng)).collect());
            section_ids.push(sec);
        }
    }

    // The title opens the document and names the dominant topic.
    plant(&mut sentences[0], &dominant, rng);
    plant(&mut sentences[0], TITLE, rng);

    let cue_section = rng.gen_range(1..n_sections);
    let section_range = |sec: usize| {
        let start: usize = section_sizes[..sec].iter().sum();
        start..start + section_sizes[sec]
    };
    let cue_range = section_range(cue_section);
    plant(&mut sentences[cue_range.start], CUE, rng);

    // Keys: dominant-topic sentences in the cue-section body, leaving at
    // least one body slot for a secondary-topic distractor.
    let mut body_rows: Vec<usize> = cue_range.clone().skip(1).collect();
    body_rows.shuffle(rng);
    let hi = (body_rows.len().saturating_sub(1)).clamp(1, 3);
    let n_keys = rng.gen_range(hi.min(2)..=hi);
    let keys: Vec<usize> = {
        let mut k: Vec<usize> = body_rows[..n_keys].to_vec();
        k.sort_unstable();
        k
    };
    for &row in &keys {
        plant(&mut sentences[row], &dominant, rng);
    }

    // Distractors. Remaining cue-body slots take secondary topics (they
    // fool a section-only scorer); outside rows take the dominant topic
    // (they fool a word-statistics-only scorer) plus one per secondary.
    for (i, &row) in body_rows[n_keys..].iter().enumerate() {
        plant(&mut sentences[row], &secondary[i % 2], rng);
    }
    let mut outside: Vec<usize> = (1..total).filter(|r| !cue_range.contains(r)).collect();
    outside.shuffle(rng);
    for &row in outside.iter().take(3) {
        plant(&mut sentences[row], &dominant, rng);
    }
    for (s, tok) in secondary.iter().enumerate() {
        for &row in outside.iter().skip(3 + s).take(1) {
            plant(&mut sentences[row], tok, rng);
        }
    }

    let abstract_sentences: Vec<Vec<String>> =
        keys.iter().map(|&r| sentences[r].clone()).collect();
    SynthDoc {
        doc: Document {
            id: format!("synth{index:05}"),
            sentences,
            section_ids,
            abstract_sentences,
            oracle_labels: None,
        },
        key_indices: keys,
    }
}

/// Write documents in the raw line-delimited input format.
pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        let mut sections: Vec<Vec<String>> = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for (sent, &sec) in doc.sentences.iter().zip(&doc.section_ids) {
            if sec == sections.len() {
                sections.push(Vec::new());
                names.push(format!("section {sec}"));
            }
            sections[sec].push(sent.join(" "));
        }
        let record = json!({
            "article_id": doc.id,
            "abstract_text": doc
                .abstract_sentences
                .iter()
                .map(|s| format!("<S> {} </S>", s.join(" ")))
                .collect::<Vec<_>>(),
            "sections": sections,
            "section_names": names,
        });
        writeln!(out, "{record}")?;
    }
    Ok(())
}
