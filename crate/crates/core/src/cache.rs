//! Versioned on-disk cache of preprocessed corpora.
//!
//! A cache directory holds the tokenized documents as line-delimited
//! records behind a header line carrying the format version, plus the
//! vocabulary and document-frequency table built from the same pass.

use std::fs::{create_dir_all, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, IdfTable, Vocabulary};
use crate::error::{Error, Result};
use crate::model::FORMAT_VERSION;

const DOCS_FILE: &str = "docs.jsonl";
const VOCAB_FILE: &str = "vocab.json";
const IDF_FILE: &str = "idf.json";

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    format_version: u32,
    n_docs: usize,
}

pub struct Cache {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub idf: IdfTable,
}

pub fn docs_path(dir: &Path) -> PathBuf {
    dir.join(DOCS_FILE)
}

pub fn write_cache(dir: &Path, docs: &[Document], vocab: &Vocabulary, idf: &IdfTable) -> Result<()> {
    create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(docs_path(dir))?);
    let header = CacheHeader {
        format_version: FORMAT_VERSION,
        n_docs: docs.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for doc in docs {
        writeln!(out, "{}", serde_json::to_string(doc)?)?;
    }
    out.flush()?;
    serde_json::to_writer(BufWriter::new(File::create(dir.join(VOCAB_FILE))?), vocab)?;
    serde_json::to_writer(BufWriter::new(File::create(dir.join(IDF_FILE))?), idf)?;
    Ok(())
}

pub fn read_cache(dir: &Path) -> Result<Cache> {
    let docs = read_docs(dir)?;
    let mut vocab: Vocabulary =
        serde_json::from_reader(BufReader::new(File::open(dir.join(VOCAB_FILE))?))?;
    vocab.reindex();
    let idf: IdfTable =
        serde_json::from_reader(BufReader::new(File::open(dir.join(IDF_FILE))?))?;
    Ok(Cache { docs, vocab, idf })
}

/// Documents only; enough for `stats` and relabeling.
pub fn read_docs(dir: &Path) -> Result<Vec<Document>> {
    let path = docs_path(dir);
    let reader = BufReader::new(File::open(&path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| Error::Data {
        line: 1,
        msg: format!("{}: empty cache", path.display()),
    })??;
    let header: CacheHeader = serde_json::from_str(&header_line).map_err(|e| Error::Data {
        line: 1,
        msg: format!("bad cache header: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Data {
            line: 1,
            msg: format!(
                "cache format version {} (expected {FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    let mut docs = Vec::with_capacity(header.n_docs);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Data {
            line: i + 2,
            msg: e.to_string(),
        })?;
        docs.push(doc);
    }
    if docs.len() != header.n_docs {
        return Err(Error::Data {
            line: 1,
            msg: format!("header claims {} docs, found {}", header.n_docs, docs.len()),
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::synthetic::{generate, SyntheticConfig};

    fn sample() -> (Vec<Document>, Vocabulary, IdfTable) {
        let docs: Vec<Document> = generate(&SyntheticConfig {
            n_docs: 3,
            seed: 1,
            ..SyntheticConfig::default()
        })
        .into_iter()
        .map(|s| s.doc)
        .collect();
        let vocab = build_vocab(&docs, 1000);
        let idf = IdfTable::build(&docs);
        (docs, vocab, idf)
    }

    #[test]
    fn cache_round_trips() {
        let (docs, vocab, idf) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &docs, &vocab, &idf).unwrap();
        let cache = read_cache(dir.path()).unwrap();
        assert_eq!(cache.docs, docs);
        assert_eq!(cache.vocab.len(), vocab.len());
        assert_eq!(cache.vocab.id("cue"), vocab.id("cue"));
        assert!((cache.idf.idf("cue") - idf.idf("cue")).abs() < 1e-15);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (docs, vocab, idf) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &docs, &vocab, &idf).unwrap();
        let path = docs_path(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
        std::fs::write(&path, bumped).unwrap();
        let err = read_docs(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let (docs, vocab, idf) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &docs, &vocab, &idf).unwrap();
        let path = docs_path(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&path, kept.join("\n")).unwrap();
        assert!(read_docs(dir.path()).is_err());
    }
}
