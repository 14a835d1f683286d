//! Training loop: per-document forward/backward with gradient
//! accumulation, epoch-end validation, patience-based early stopping,
//! and best-checkpoint tracking.
//!
//! Documents inside an accumulation chunk run in parallel; their
//! gradients are reduced in document order and the optimizer step is
//! sequential, so a fixed seed reproduces checkpoints bit-for-bit
//! regardless of thread scheduling.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde_json::json;

use crate::corpus::{IdfTable, Vocabulary};
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::model::{bce_loss, Checkpoint, DocBundle, Model, FORMAT_VERSION};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamId;
use crate::summarize::select_sentences;
use crate::tape::Tape;

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

struct DocGrads {
    loss: f64,
    grads: Vec<(ParamId, Array2<f64>)>,
    emb_rows: HashMap<usize, Array1<f64>>,
}

/// Deterministic per-document dropout seed, independent of scheduling.
fn doc_seed(seed: u64, epoch: usize, doc_index: usize) -> u64 {
    (seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((doc_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn forward_backward(model: &Model, bundle: &DocBundle, dropout_seed: Option<u64>) -> Result<DocGrads> {
    let labels = bundle.labels.as_ref().ok_or_else(|| {
        Error::Model(format!("document {} has no oracle labels", bundle.id))
    })?;
    let mut t = Tape::new();
    let mut dropout = dropout_seed.map(|s| Dropout::new(model.config.dropout, s));
    let out = model.forward(&mut t, bundle, dropout.as_mut());
    let loss = bce_loss(&mut t, out.scores, labels)?;
    let loss_val = t.value(loss)[(0, 0)];
    let grads = t.backward(loss);
    let mut emb_rows = HashMap::new();
    model.embedding_row_grads(&grads, &out, &mut emb_rows);
    Ok(DocGrads {
        loss: loss_val,
        grads: t.param_grads(&grads),
        emb_rows,
    })
}

/// Mean loss over a validation split, dropout off.
pub fn validation_loss(model: &Model, bundles: &[DocBundle]) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::Model("empty validation split".into()));
    }
    let losses: Vec<Result<f64>> = bundles
        .par_iter()
        .map(|b| {
            let labels = b.labels.as_ref().ok_or_else(|| {
                Error::Model(format!("document {} has no oracle labels", b.id))
            })?;
            let mut t = Tape::new();
            let out = model.forward(&mut t, b, None);
            let loss = bce_loss(&mut t, out.scores, labels)?;
            Ok(t.value(loss)[(0, 0)])
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / bundles.len() as f64)
}

/// Mean unigram-overlap f1 of extracted summaries, for checkpoint
/// selection when configured.
fn validation_rouge(model: &Model, bundles: &[DocBundle]) -> f64 {
    let k = model.config.select_k;
    let f1s: Vec<f64> = bundles
        .par_iter()
        .map(|b| {
            let mut t = Tape::new();
            let out = model.forward(&mut t, b, None);
            let scores: Vec<f64> = t.value(out.scores).column(0).to_vec();
            let idx = select_sentences(&scores, k, &b.doc, model.config.trigram_blocking);
            let mut cand: Vec<String> = Vec::new();
            for &i in &idx {
                cand.extend(b.doc.sentences[i].iter().cloned());
            }
            let reference = crate::rouge::concat_refs(&b.doc.abstract_sentences);
            crate::rouge::rouge_n(&cand, &reference, 1).f1
        })
        .collect();
    f1s.iter().sum::<f64>() / f1s.len().max(1) as f64
}

fn largest_param_norms(model: &Model, top: usize) -> String {
    let mut norms: Vec<(String, f64)> = model
        .params
        .ids()
        .map(|id| {
            let v = model.params.get(id);
            (
                model.params.name(id).to_string(),
                v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            )
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    norms
        .iter()
        .take(top)
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Train to convergence or the epoch cap, returning the best-validation
/// checkpoint and the loss history. Progress records go to `log` as one
/// structured line per epoch.
pub fn train(
    model: &mut Model,
    train_bundles: &[DocBundle],
    val_bundles: &[DocBundle],
    vocab: &Vocabulary,
    idf: &IdfTable,
    mut log: Option<&mut dyn Write>,
) -> Result<(Checkpoint, TrainReport)> {
    if train_bundles.is_empty() {
        return Err(Error::Model("empty training split".into()));
    }
    let cfg = model.config.clone();
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg.clone(), &model.params);

    let mut report = TrainReport {
        epochs_run: 0,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_selection = f64::NEG_INFINITY;
    let mut best: Option<(crate::params::ParamSet, Adam, usize, f64)> = None;
    let mut bad_epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut epoch_loss = 0.0;
        for (chunk_idx, chunk) in train_bundles.chunks(cfg.accumulate_docs).enumerate() {
            let base = chunk_idx * cfg.accumulate_docs;
            let use_dropout = cfg.dropout > 0.0;
            let results: Vec<Result<DocGrads>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, bundle)| {
                    let seed = use_dropout.then(|| doc_seed(cfg.seed, epoch, base + i));
                    forward_backward(model, bundle, seed)
                })
                .collect();

            let mut summed: HashMap<ParamId, Array2<f64>> = HashMap::new();
            let mut emb_rows: HashMap<usize, Array1<f64>> = HashMap::new();
            for (i, res) in results.into_iter().enumerate() {
                let dg = res?;
                if !dg.loss.is_finite() {
                    return Err(Error::Model(format!(
                        "non-finite loss at epoch {epoch}, document {} ({}); largest parameter norms: {}",
                        base + i,
                        chunk[i].id,
                        largest_param_norms(model, 5),
                    )));
                }
                epoch_loss += dg.loss;
                for (pid, g) in dg.grads {
                    match summed.get_mut(&pid) {
                        Some(acc) => *acc += &g,
                        None => {
                            summed.insert(pid, g);
                        }
                    }
                }
                for (row, g) in dg.emb_rows {
                    match emb_rows.get_mut(&row) {
                        Some(acc) => *acc += &g,
                        None => {
                            emb_rows.insert(row, g);
                        }
                    }
                }
            }

            let scale = 1.0 / chunk.len() as f64;
            let mut grads: Vec<(ParamId, Array2<f64>)> = summed
                .into_iter()
                .map(|(pid, mut g)| {
                    g *= scale;
                    (pid, g)
                })
                .collect();
            grads.sort_by_key(|(pid, _)| *pid);
            adam.step(&mut model.params, &grads);
            if model.embeddings.trainable {
                for g in emb_rows.values_mut() {
                    *g *= scale;
                }
                model.embeddings.sparse_adam_step(&emb_rows, &adam_cfg);
            }
        }
        let train_loss = epoch_loss / train_bundles.len() as f64;
        let val_loss = validation_loss(model, val_bundles)?;
        report.train_losses.push(train_loss);
        report.val_losses.push(val_loss);
        report.epochs_run = epoch;

        let selection_metric = if cfg.select_by_rouge {
            validation_rouge(model, val_bundles)
        } else {
            -val_loss
        };
        let val_rouge = if cfg.select_by_rouge {
            Some(selection_metric)
        } else {
            None
        };
        if selection_metric > best_selection {
            best_selection = selection_metric;
            best = Some((model.params.clone(), adam.clone(), epoch, val_loss));
        }

        let improved = val_loss < report.best_val_loss;
        if improved {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }

        if let Some(w) = log.as_deref_mut() {
            let record = json!({
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_rouge1": val_rouge,
                "seconds": start.elapsed().as_secs_f64(),
            });
            writeln!(w, "{record}")?;
        }

        if bad_epochs >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }

    let (best_params, best_adam, best_epoch, best_val) =
        best.expect("at least one epoch ran");
    let checkpoint = Checkpoint {
        version: FORMAT_VERSION,
        config: cfg,
        vocab: vocab.clone(),
        idf: idf.clone(),
        params: best_params,
        embeddings: model.embeddings.clone(),
        optimizer: Some(best_adam),
        epoch: best_epoch,
        val_loss: best_val,
    };
    Ok((checkpoint, report))
}
