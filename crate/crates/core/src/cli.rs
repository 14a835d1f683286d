//! Command-line pipeline: preprocess, label, stats, train, eval,
//! summarize, gradcheck, ablate.
//!
//! Flags mirror the model configuration one-to-one; values from a
//! config file are overridden by flags. Output directories receive a
//! manifest recording command, configuration, and timing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::cache::{read_cache, write_cache, Cache};
use crate::corpus::{corpus_stats, load_dataset, Document, IdfTable, OnError, Vocabulary,
    SENT_COUNT_BUCKETS, SENT_LEN_BUCKETS};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gradcheck::standard_suites;
use crate::manifest::RunManifest;
use crate::model::{build_bundle, Checkpoint, DocBundle, Model, ModelConfig, HyperKind, Wiring};
use crate::oracle::greedy_oracle;
use crate::summarize::{evaluate, summarize_doc};
use crate::train::train;

#[derive(Parser)]
#[command(
    name = "hiersum",
    version,
    about = "Extractive summarization of long structured documents with hierarchical graph attention"
)]
struct Cli {
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a raw dataset and build the vocabulary cache.
    Preprocess(PreprocessArgs),
    /// Attach greedy oracle labels to a preprocessed cache.
    Label(LabelArgs),
    /// Corpus statistics with the standard bucket scheme.
    Stats(StatsArgs),
    /// Train a model on a labeled cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint against LEAD and ORACLE baselines.
    Eval(EvalArgs),
    /// Emit per-document summaries from a checkpoint.
    Summarize(SummarizeArgs),
    /// Finite-difference verification of every layer family.
    Gradcheck(GradcheckArgs),
    /// Train and compare the standard model variants.
    Ablate(AblateArgs),
}

/// Flags mirroring the model configuration; unset flags fall back to
/// the config file, then to defaults.
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// TOML config file with any subset of these keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    edge_dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    /// Comma-separated heads per heterogeneous block, e.g. 8,6.
    #[arg(long, value_delimiter = ',')]
    hetero_heads: Option<Vec<usize>>,
    #[arg(long)]
    hyper_layers: Option<usize>,
    #[arg(long)]
    hyper_heads: Option<usize>,
    #[arg(long)]
    ffn_inner: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    accumulate_docs: Option<usize>,
    /// hierarchical or parallel.
    #[arg(long)]
    wiring: Option<String>,
    /// self-attn or additive.
    #[arg(long)]
    hyper_kind: Option<String>,
    #[arg(long)]
    use_hetero: Option<bool>,
    #[arg(long)]
    use_hyper: Option<bool>,
    #[arg(long)]
    masked_edge_attention: Option<bool>,
    #[arg(long)]
    num_bins: Option<usize>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    max_sentences: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    oracle_max: Option<usize>,
    #[arg(long)]
    select_k: Option<usize>,
    #[arg(long)]
    trigram_blocking: Option<bool>,
    #[arg(long)]
    train_embeddings: Option<bool>,
    #[arg(long)]
    stem: Option<bool>,
    #[arg(long)]
    select_by_rouge: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
}

macro_rules! override_field {
    ($cfg:ident, $flags:ident, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $flags.$field.clone() {
            $cfg.$field = v;
        })+
    };
}

impl ConfigFlags {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ModelConfig::default(),
        };
        let f = self;
        override_field!(
            cfg, f, hidden, edge_dim, word_dim, hetero_heads, hyper_layers, hyper_heads,
            ffn_inner, dropout, learning_rate, weight_decay, max_epochs, patience,
            accumulate_docs, num_bins, bin_width, max_sentences, max_tokens, vocab_size,
            oracle_max, select_k, trigram_blocking, train_embeddings, stem, select_by_rouge,
            seed, use_hetero, use_hyper, masked_edge_attention,
        );
        if let Some(w) = &f.wiring {
            cfg.wiring = w.parse::<Wiring>()?;
        }
        if let Some(h) = &f.hyper_kind {
            cfg.hyper_kind = h.parse::<HyperKind>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw line-delimited dataset.
    #[arg(long)]
    input: PathBuf,
    /// Cache directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Stop after this many documents (0 = all).
    #[arg(long, default_value_t = 0)]
    limit: usize,
    /// skip or abort on malformed records.
    #[arg(long, default_value = "abort")]
    on_error: String,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct LabelArgs {
    /// Cache directory to label in place.
    #[arg(long)]
    cache: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct StatsArgs {
    /// Raw dataset file or cache directory.
    #[arg(long)]
    input: PathBuf,
    /// Emit a machine-readable record instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled cache directory.
    #[arg(long)]
    cache: PathBuf,
    /// Run directory for checkpoint, log, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of documents held out for validation (from the end).
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Pretrained word vectors (token v1 .. vD per line); random if unset.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cache directory with held-out documents.
    #[arg(long)]
    cache: PathBuf,
    /// Selection budget; defaults to the checkpoint's.
    #[arg(long)]
    k: Option<usize>,
    /// Report stemming override; defaults to the checkpoint's.
    #[arg(long)]
    stem: Option<bool>,
    /// Write the machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw dataset file or cache directory.
    #[arg(long)]
    input: PathBuf,
    /// One structured record per document.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Labeled cache directory.
    #[arg(long)]
    cache: PathBuf,
    /// Output directory for the comparison report.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[command(flatten)]
    flags: ConfigFlags,
}

/// Parse argv and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // A failed build means a pool already exists (tests); keep going.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Label(a) => label(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => do_train(a),
        Command::Eval(a) => do_eval(a),
        Command::Summarize(a) => do_summarize(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = a.flags.resolve()?;
    let on_error = match a.on_error.as_str() {
        "skip" => OnError::Skip,
        "abort" => OnError::Abort,
        other => {
            return Err(Error::Config(format!(
                "unknown --on-error value '{other}' (expected skip or abort)"
            )))
        }
    };
    let docs = load_dataset(&a.input, on_error, a.limit)?;
    if docs.is_empty() {
        return Err(Error::Data {
            line: 0,
            msg: format!("{}: no usable documents", a.input.display()),
        });
    }
    let vocab = crate::corpus::build_vocab(&docs, cfg.vocab_size);
    let idf = IdfTable::build(&docs);
    write_cache(&a.out, &docs, &vocab, &idf)?;
    let mut manifest = RunManifest::new("preprocess", &cfg)
        .input(&a.input)
        .output(&a.out);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    eprintln!(
        "preprocessed {} documents, vocabulary {} tokens, {:.1}s",
        docs.len(),
        vocab.len(),
        manifest.wall_seconds
    );
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = a.flags.resolve()?;
    let Cache { mut docs, vocab, idf } = read_cache(&a.cache)?;
    let labels: Vec<Vec<u8>> = docs
        .par_iter()
        .map(|d| greedy_oracle(d, cfg.oracle_max).labels)
        .collect();
    let mut positives = 0usize;
    for (doc, l) in docs.iter_mut().zip(labels) {
        positives += l.iter().filter(|&&x| x == 1).count();
        doc.oracle_labels = Some(l);
    }
    write_cache(&a.cache, &docs, &vocab, &idf)?;
    let mut manifest = RunManifest::new("label", &cfg)
        .input(&a.cache)
        .output(&a.cache);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.cache)?;
    eprintln!(
        "labeled {} documents ({} positive sentences), {:.1}s",
        docs.len(),
        positives,
        manifest.wall_seconds
    );
    Ok(())
}

fn load_docs_any(path: &Path) -> Result<Vec<Document>> {
    if path.is_dir() {
        crate::cache::read_docs(path)
    } else {
        load_dataset(path, OnError::Abort, 0)
    }
}

fn stats(a: StatsArgs) -> Result<()> {
    let docs = load_docs_any(&a.input)?;
    let stats = corpus_stats(&docs);
    if a.json {
        let record = json!({
            "n_docs": stats.n_docs,
            "avg_doc_sentences": stats.avg_doc_sentences(),
            "avg_doc_tokens": stats.avg_doc_tokens(),
            "avg_summary_tokens": stats.avg_summary_tokens(),
            "sent_len_buckets": SENT_LEN_BUCKETS,
            "sent_len_fractions": stats.sent_len_fractions(),
            "sent_count_buckets": SENT_COUNT_BUCKETS,
            "sent_count_fractions": stats.sent_count_fractions(),
        });
        println!("{record}");
        return Ok(());
    }
    println!("documents          {}", stats.n_docs);
    println!("avg sentences/doc  {:.2}", stats.avg_doc_sentences());
    println!("avg tokens/doc     {:.2}", stats.avg_doc_tokens());
    println!("avg summary tokens {:.2}", stats.avg_summary_tokens());
    println!("\nsentence length      share");
    for (label, frac) in SENT_LEN_BUCKETS.iter().zip(stats.sent_len_fractions()) {
        println!("{label:<12} {:>12.2}%", frac * 100.0);
    }
    println!("\nsentences per doc    share");
    for (label, frac) in SENT_COUNT_BUCKETS.iter().zip(stats.sent_count_fractions()) {
        println!("{label:<12} {:>12.2}%", frac * 100.0);
    }
    Ok(())
}

/// Split a labeled cache into train/validation bundles.
fn split_bundles(
    cache: &Cache,
    cfg: &ModelConfig,
    val_frac: f64,
) -> Result<(Vec<DocBundle>, Vec<DocBundle>)> {
    if !(0.0..1.0).contains(&val_frac) || cache.docs.is_empty() {
        return Err(Error::Config("validation fraction must be in [0, 1)".into()));
    }
    if cache.docs.iter().any(|d| d.oracle_labels.is_none()) {
        return Err(Error::Data {
            line: 0,
            msg: "cache has unlabeled documents; run `label` first".into(),
        });
    }
    let bundles: Vec<DocBundle> = cache
        .docs
        .par_iter()
        .map(|d| build_bundle(d, &cache.vocab, &cache.idf, cfg))
        .collect::<Result<_>>()?;
    let n_val = ((bundles.len() as f64) * val_frac).round() as usize;
    let n_val = n_val.clamp(usize::from(val_frac > 0.0), bundles.len().saturating_sub(1));
    let mut train = bundles;
    let val = train.split_off(train.len() - n_val);
    Ok((train, val))
}

fn build_embeddings(
    path: &Option<PathBuf>,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
) -> Result<EmbeddingTable> {
    match path {
        Some(p) => EmbeddingTable::load(p, vocab, cfg.word_dim, cfg.seed),
        None => Ok(EmbeddingTable::random(vocab.len(), cfg.word_dim, cfg.seed)),
    }
}

fn do_train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = a.flags.resolve()?;
    let cache = read_cache(&a.cache)?;
    let (train_b, val_b) = split_bundles(&cache, &cfg, a.val_frac)?;
    eprintln!(
        "training on {} documents, validating on {}",
        train_b.len(),
        val_b.len()
    );
    let emb = build_embeddings(&a.embeddings, &cache.vocab, &cfg)?;
    let mut model = Model::new(cfg.clone(), emb)?;

    std::fs::create_dir_all(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let (checkpoint, report) = train(
        &mut model,
        &train_b,
        &val_b,
        &cache.vocab,
        &cache.idf,
        Some(&mut log),
    )?;
    log.flush()?;

    let ckpt_path = a.out.join("model.ckpt");
    checkpoint.save(&ckpt_path)?;
    let mut manifest = RunManifest::new("train", &cfg)
        .input(&a.cache)
        .output(&ckpt_path)
        .output(&log_path);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    eprintln!(
        "done: {} epochs{}, best val loss {:.4} at epoch {}, {:.1}s",
        report.epochs_run,
        if report.stopped_early { " (early stop)" } else { "" },
        report.best_val_loss,
        report.best_epoch,
        manifest.wall_seconds
    );
    Ok(())
}

fn checkpoint_bundles(
    model: &Model,
    vocab: &Vocabulary,
    idf: &IdfTable,
    docs: &[Document],
) -> Result<Vec<DocBundle>> {
    docs.par_iter()
        .map(|d| build_bundle(d, vocab, idf, &model.config))
        .collect()
}

fn do_eval(a: EvalArgs) -> Result<()> {
    let cp = Checkpoint::load(&a.checkpoint)?;
    let (model, _, vocab, idf) = cp.into_model()?;
    let docs = crate::cache::read_docs(&a.cache)?;
    if docs.is_empty() {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    let bundles = checkpoint_bundles(&model, &vocab, &idf, &docs)?;
    let k = a.k.unwrap_or(model.config.select_k);
    let stem = a.stem.unwrap_or(model.config.stem);
    let report = evaluate(&model, &bundles, k, stem)?;
    print!("{}", report.render());
    if let Some(out) = a.out {
        serde_json::to_writer_pretty(BufWriter::new(File::create(&out)?), &report)?;
        eprintln!("report written to {}", out.display());
    }
    Ok(())
}

fn do_summarize(a: SummarizeArgs) -> Result<()> {
    let cp = Checkpoint::load(&a.checkpoint)?;
    let (model, _, vocab, idf) = cp.into_model()?;
    let docs = load_docs_any(&a.input)?;
    let k = a.k.unwrap_or(model.config.select_k);
    let results: Vec<crate::summarize::SummaryResult> = docs
        .par_iter()
        .map(|d| {
            let bundle = build_bundle(d, &vocab, &idf, &model.config)?;
            Ok(summarize_doc(&model, &bundle, k, model.config.stem))
        })
        .collect::<Result<_>>()?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    for r in &results {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    eprintln!("wrote {} summaries to {}", results.len(), a.out.display());
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let mut failed = Vec::new();
    for suite in standard_suites(a.seed) {
        let status = if suite.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<28} max rel err {:.3e} (tol {:.0e}, {} entries, worst {})",
            suite.name,
            suite.result.max_rel_err,
            suite.tol,
            suite.result.n_checked,
            suite.result.worst_param
        );
        if !suite.passed() {
            failed.push(suite.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Model(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn ablate(a: AblateArgs) -> Result<()> {
    let start = Instant::now();
    let base = a.flags.resolve()?;
    let cache = read_cache(&a.cache)?;

    let variants: [(&str, ModelConfig); 4] = [
        ("full", base.clone()),
        (
            "no-hetero",
            ModelConfig {
                use_hetero: false,
                ..base.clone()
            },
        ),
        (
            "no-hyper",
            ModelConfig {
                use_hyper: false,
                ..base.clone()
            },
        ),
        (
            "parallel",
            ModelConfig {
                wiring: Wiring::Parallel,
                ..base.clone()
            },
        ),
    ];

    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for (name, cfg) in &variants {
        let (train_b, val_b) = split_bundles(&cache, cfg, a.val_frac)?;
        let emb = EmbeddingTable::random(cache.vocab.len(), cfg.word_dim, cfg.seed);
        let mut model = Model::new(cfg.clone(), emb)?;
        let (checkpoint, report) = train(
            &mut model,
            &train_b,
            &val_b,
            &cache.vocab,
            &cache.idf,
            None,
        )?;
        let (best_model, _, _, _) = checkpoint.into_model()?;
        let eval_report = evaluate(&best_model, &val_b, cfg.select_k, cfg.stem)?;
        let row = eval_report
            .row("model")
            .expect("evaluate always emits a model row")
            .clone();
        eprintln!(
            "{name}: {} epochs, val loss {:.4}, R-1 {:.4}",
            report.epochs_run, report.best_val_loss, row.rouge1
        );
        rows.push((name.to_string(), row));
    }

    println!("{:<12} {:>8} {:>8} {:>8}", "variant", "R-1", "R-2", "R-L");
    for (name, row) in &rows {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4}",
            name, row.rouge1, row.rouge2, row.rouge_l
        );
    }

    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|(name, row)| json!({ "variant": name, "row": row }))
        .collect();
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(a.out.join("ablation.json"))?),
        &json_rows,
    )?;
    let mut manifest = RunManifest::new("ablate", &base)
        .input(&a.cache)
        .output(&a.out);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    Ok(())
}
