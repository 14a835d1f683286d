//! Document ingestion, tokenization, vocabulary, and corpus statistics.
//!
//! Input is line-delimited JSON, one document per line, with fields
//! `article_id`, `abstract_text`, `sections` (list of sentence-string
//! lists) and optionally `article_text` as a fallback when section
//! metadata is missing. Tokenization is lowercase whitespace splitting
//! with punctuation stripped from token edges; it is idempotent, so
//! cached documents re-tokenize to themselves.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sentences shorter than a section get grouped into pseudo-sections of
/// this many sentences when the input has no section metadata.
pub const PSEUDO_SECTION_CHUNK: usize = 20;

/// Reserved vocabulary id for padding positions.
pub const PAD: u32 = 0;
/// Reserved vocabulary id for out-of-vocabulary tokens.
pub const UNK: u32 = 1;

/// One document: tokenized body sentences with section assignments and
/// the tokenized reference abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Lowercased word tokens, one inner vector per sentence.
    pub sentences: Vec<Vec<String>>,
    /// Section index per sentence, contiguous values starting at 0.
    pub section_ids: Vec<usize>,
    pub abstract_sentences: Vec<Vec<String>>,
    /// Greedy-oracle extraction labels, filled in by the labeling pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_labels: Option<Vec<u8>>,
}

impl Document {
    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn n_sections(&self) -> usize {
        self.section_ids.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn body_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn abstract_tokens(&self) -> usize {
        self.abstract_sentences.iter().map(Vec::len).sum()
    }

    /// All abstract tokens in order, the reference side of ROUGE.
    pub fn abstract_flat(&self) -> Vec<String> {
        self.abstract_sentences.iter().flatten().cloned().collect()
    }
}

/// Lowercase, split on whitespace, strip non-alphanumeric characters from
/// token edges, drop tokens that become empty. Interior punctuation
/// (hyphens, apostrophes, decimal points) is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if t.is_empty() {
                None
            } else {
                Some(t.to_lowercase())
            }
        })
        .collect()
}

/// Abstract sentences in the public corpus release carry `<S>`/`</S>`
/// markers; remove them before tokenizing.
fn strip_sentence_tags(text: &str) -> String {
    text.replace("<S>", " ")
        .replace("</S>", " ")
        .replace("<s>", " ")
        .replace("</s>", " ")
}

/// Section ids for `n` sentences grouped into consecutive chunks.
pub fn assign_pseudo_sections(n_sentences: usize, chunk: usize) -> Vec<usize> {
    assert!(chunk >= 1);
    (0..n_sentences).map(|i| i / chunk).collect()
}

/// What to do when an input line fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnError {
    Skip,
    Abort,
}

#[derive(Debug, Default, Deserialize)]
struct RawRecord {
    #[serde(default)]
    article_id: Option<String>,
    #[serde(default)]
    abstract_text: Option<Vec<String>>,
    #[serde(default)]
    sections: Option<Vec<Vec<String>>>,
    #[serde(default)]
    article_text: Option<Vec<String>>,
}

fn record_to_document(raw: RawRecord, line: usize) -> Result<Option<Document>> {
    let id = raw
        .article_id
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("line-{line}"));

    let mut sentences: Vec<Vec<String>> = Vec::new();
    let mut section_ids: Vec<usize> = Vec::new();

    let has_sections = raw.sections.as_ref().is_some_and(|s| !s.is_empty());
    if has_sections {
        let mut next_section = 0;
        for section in raw.sections.unwrap() {
            let mut used = false;
            for sent in section {
                let toks = tokenize(&sent);
                if !toks.is_empty() {
                    sentences.push(toks);
                    section_ids.push(next_section);
                    used = true;
                }
            }
            if used {
                next_section += 1;
            }
        }
    } else if let Some(body) = raw.article_text {
        for sent in body {
            let toks = tokenize(&sent);
            if !toks.is_empty() {
                sentences.push(toks);
            }
        }
        section_ids = assign_pseudo_sections(sentences.len(), PSEUDO_SECTION_CHUNK);
    } else {
        return Err(Error::Data {
            line,
            msg: "record has neither `sections` nor `article_text`".into(),
        });
    }

    if sentences.is_empty() {
        log::warn!("skipping empty document {id} at line {line}");
        return Ok(None);
    }

    let abstract_sentences = raw
        .abstract_text
        .unwrap_or_default()
        .iter()
        .map(|s| tokenize(&strip_sentence_tags(s)))
        .filter(|t| !t.is_empty())
        .collect();

    Ok(Some(Document {
        id,
        sentences,
        section_ids,
        abstract_sentences,
        oracle_labels: None,
    }))
}

/// Streaming reader over a dataset file. Yields one `Result<Document>`
/// per parseable nonempty line; empty documents are silently skipped.
pub struct DatasetReader {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Config(format!("cannot open dataset {}: {e}", path.display()))
        })?;
        Ok(Self {
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: std::result::Result<RawRecord, _> = serde_json::from_str(&line);
            match parsed {
                Ok(raw) => match record_to_document(raw, self.line_no) {
                    Ok(Some(doc)) => return Some(Ok(doc)),
                    Ok(None) => continue,
                    Err(e) => return Some(Err(e)),
                },
                Err(e) => {
                    return Some(Err(Error::Data {
                        line: self.line_no,
                        msg: e.to_string(),
                    }))
                }
            }
        }
    }
}

/// Load a whole split, applying the skip-or-abort policy to bad records.
/// `limit` caps the number of documents kept (0 = unlimited).
pub fn load_dataset(path: &Path, on_error: OnError, limit: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for item in DatasetReader::open(path)? {
        match item {
            Ok(doc) => {
                docs.push(doc);
                if limit > 0 && docs.len() >= limit {
                    break;
                }
            }
            Err(e) => match on_error {
                OnError::Skip => log::warn!("skipping bad record: {e}"),
                OnError::Abort => return Err(e),
            },
        }
    }
    Ok(docs)
}

/// Keep the first `max_sentences` sentences and the first `max_tokens`
/// tokens of each; section ids follow the kept sentences. The abstract
/// is never truncated.
pub fn truncate(mut doc: Document, max_sentences: usize, max_tokens: usize) -> Document {
    assert!(max_sentences >= 1 && max_tokens >= 1);
    doc.sentences.truncate(max_sentences);
    doc.section_ids.truncate(max_sentences);
    if let Some(labels) = doc.oracle_labels.as_mut() {
        labels.truncate(max_sentences);
    }
    for sent in &mut doc.sentences {
        sent.truncate(max_tokens);
    }
    doc
}

/// Token-to-id mapping with two reserved entries: PAD=0 and UNK=1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Tokens in id order; index 0 and 1 are the reserved sentinels.
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Rank tokens by frequency (ties broken lexicographically) and keep
    /// the top `cap` plus the two reserved entries.
    pub fn build(counts: &HashMap<String, u64>, cap: usize) -> Self {
        let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let mut tokens = Vec::with_capacity(ranked.len() + 2);
        tokens.push("<pad>".to_string());
        tokens.push("<unk>".to_string());
        tokens.extend(ranked.into_iter().map(|(t, _)| t.clone()));
        Self::from_tokens(tokens)
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        *self = Self::from_tokens(std::mem::take(&mut self.tokens));
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Total entry count including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter_real_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().skip(2).map(String::as_str)
    }
}

/// Count body-token frequencies over a document stream and build the
/// capped vocabulary.
pub fn build_vocab<'a, I>(docs: I, cap: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for sent in &doc.sentences {
            for tok in sent {
                *counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    Vocabulary::build(&counts, cap)
}

/// Inverse document frequency from the training split:
/// idf(t) = max(0, ln(N / (1 + df(t)))). Unseen tokens get ln(N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdfTable {
    pub n_docs: usize,
    // Ordered map so serialized tables and checkpoints are byte-stable.
    df: BTreeMap<String, u32>,
}

impl IdfTable {
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0;
        let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for doc in docs {
            n_docs += 1;
            seen.clear();
            for sent in &doc.sentences {
                for tok in sent {
                    if seen.insert(tok) {
                        *df.entry(tok.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        Self { n_docs, df }
    }

    pub fn idf(&self, token: &str) -> f64 {
        if self.n_docs == 0 {
            return 0.0;
        }
        let df = self.df.get(token).copied().unwrap_or(0) as f64;
        (self.n_docs as f64 / (1.0 + df)).ln().max(0.0)
    }
}

/// Histogram bucket boundaries for sentence lengths, in tokens.
pub const SENT_LEN_BUCKETS: [&str; 6] =
    ["(0,20]", "(20,40]", "(40,60]", "(60,80]", "(80,100]", ">100"];
/// Histogram bucket boundaries for per-document sentence counts.
pub const SENT_COUNT_BUCKETS: [&str; 6] =
    ["(0,50]", "(50,100]", "(100,150]", "(150,200]", "(200,250]", ">250"];

fn bucket_of(value: usize, width: usize) -> usize {
    debug_assert!(value >= 1);
    ((value - 1) / width).min(5)
}

/// Corpus-level histograms and averages, computed before truncation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: u64,
    pub n_sentences: u64,
    pub total_doc_tokens: u64,
    pub total_abstract_tokens: u64,
    pub sent_len_counts: [u64; 6],
    pub sent_count_counts: [u64; 6],
}

impl CorpusStats {
    pub fn add(&mut self, doc: &Document) {
        self.n_docs += 1;
        self.n_sentences += doc.n_sentences() as u64;
        self.total_doc_tokens += doc.body_tokens() as u64;
        self.total_abstract_tokens += doc.abstract_tokens() as u64;
        for sent in &doc.sentences {
            self.sent_len_counts[bucket_of(sent.len(), 20)] += 1;
        }
        self.sent_count_counts[bucket_of(doc.n_sentences(), 50)] += 1;
    }

    /// Fraction of sentences per length bucket; zeros on an empty corpus.
    pub fn sent_len_fractions(&self) -> [f64; 6] {
        fractions(&self.sent_len_counts, self.n_sentences)
    }

    /// Fraction of documents per sentence-count bucket.
    pub fn sent_count_fractions(&self) -> [f64; 6] {
        fractions(&self.sent_count_counts, self.n_docs)
    }

    pub fn avg_doc_sentences(&self) -> f64 {
        ratio(self.n_sentences, self.n_docs)
    }

    pub fn avg_doc_tokens(&self) -> f64 {
        ratio(self.total_doc_tokens, self.n_docs)
    }

    pub fn avg_summary_tokens(&self) -> f64 {
        ratio(self.total_abstract_tokens, self.n_docs)
    }
}

fn fractions(counts: &[u64; 6], total: u64) -> [f64; 6] {
    let mut out = [0.0; 6];
    if total > 0 {
        for (o, &c) in out.iter_mut().zip(counts) {
            *o = c as f64 / total as f64;
        }
    }
    out
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn corpus_stats<'a, I>(docs: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut stats = CorpusStats::default();
    for doc in docs {
        stats.add(doc);
    }
    stats
}
