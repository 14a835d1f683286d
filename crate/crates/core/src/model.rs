//! Model assembly: configuration, forward wiring, scoring head, loss,
//! and checkpoint serialization.
//!
//! The default wiring is hierarchical: sentence features from the
//! convolution/recurrent encoder flow through the heterogeneous
//! word-sentence attention blocks, then through the section-hypergraph
//! attention stack, then into the scoring head. The parallel variant
//! runs both branches from the initial sentence features and
//! concatenates their outputs before the head. Either branch can be
//! bypassed entirely, leaving an identity passthrough.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{truncate, Document, IdfTable, Vocabulary};
use crate::dropout::Dropout;
use crate::embeddings::EmbeddingTable;
use crate::encoder::{encode_sentences, EncoderParams, SentenceBatch};
use crate::error::{Error, Result};
use crate::graph::{build_hetero_graph, build_hypergraph, GraphConfig, HeteroGraph, Hypergraph};
use crate::hetero_attn::{hetero_block, DirectedEdges, HeteroBlockParams};
use crate::hyper_attn::{additive_layer, self_attn_layer, AdditiveParams, SelfAttnParams, IncidencePairs};
use crate::optim::Adam;
use crate::params::{ParamId, ParamSet};
use crate::tape::{Grads, NodeId, Tape};

/// Checkpoint and cache format version; bump on layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wiring {
    Hierarchical,
    Parallel,
}

impl FromStr for Wiring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(Self::Hierarchical),
            "parallel" => Ok(Self::Parallel),
            other => Err(Error::Config(format!(
                "unknown wiring '{other}' (expected hierarchical or parallel)"
            ))),
        }
    }
}

impl fmt::Display for Wiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hierarchical => "hierarchical",
            Self::Parallel => "parallel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperKind {
    /// Two-phase self-attention over the section hypergraph.
    SelfAttn,
    /// Additive-attention baseline with one shared projection.
    Additive,
}

impl FromStr for HyperKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self-attn" => Ok(Self::SelfAttn),
            "additive" => Ok(Self::Additive),
            other => Err(Error::Config(format!(
                "unknown hypergraph layer '{other}' (expected self-attn or additive)"
            ))),
        }
    }
}

impl fmt::Display for HyperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SelfAttn => "self-attn",
            Self::Additive => "additive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub edge_dim: usize,
    pub word_dim: usize,
    /// Head count per heterogeneous attention block; the length sets the
    /// number of blocks.
    pub hetero_heads: Vec<usize>,
    pub hyper_layers: usize,
    pub hyper_heads: usize,
    pub ffn_inner: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Documents per optimizer step (gradient accumulation).
    pub accumulate_docs: usize,
    pub wiring: Wiring,
    pub hyper_kind: HyperKind,
    pub use_hetero: bool,
    pub use_hyper: bool,
    /// Restrict edge-level attention to incident hyperedges.
    pub masked_edge_attention: bool,
    pub num_bins: usize,
    pub bin_width: f64,
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub oracle_max: usize,
    pub select_k: usize,
    pub trigram_blocking: bool,
    pub train_embeddings: bool,
    /// Apply stemming when scoring summaries.
    pub stem: bool,
    /// Select the best checkpoint by validation summary quality instead
    /// of validation loss (stopping always follows the loss).
    pub select_by_rouge: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            edge_dim: 50,
            word_dim: 300,
            hetero_heads: vec![8, 6],
            hyper_layers: 2,
            hyper_heads: 4,
            ffn_inner: 512,
            dropout: 0.1,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            max_epochs: 12,
            patience: 3,
            accumulate_docs: 32,
            wiring: Wiring::Hierarchical,
            hyper_kind: HyperKind::SelfAttn,
            use_hetero: true,
            use_hyper: true,
            masked_edge_attention: true,
            num_bins: 10,
            bin_width: 0.25,
            max_sentences: 200,
            max_tokens: 100,
            vocab_size: 50_000,
            oracle_max: 7,
            select_k: 7,
            trigram_blocking: false,
            train_embeddings: false,
            stem: false,
            select_by_rouge: false,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("edge_dim", self.edge_dim),
            ("word_dim", self.word_dim),
            ("hyper_layers", self.hyper_layers),
            ("hyper_heads", self.hyper_heads),
            ("ffn_inner", self.ffn_inner),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("accumulate_docs", self.accumulate_docs),
            ("num_bins", self.num_bins),
            ("max_sentences", self.max_sentences),
            ("max_tokens", self.max_tokens),
            ("vocab_size", self.vocab_size),
            ("select_k", self.select_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hetero_heads.is_empty() || self.hetero_heads.contains(&0) {
            return Err(Error::Config(
                "hetero_heads must be a non-empty list of positive head counts".into(),
            ));
        }
        if !self.hidden.is_multiple_of(8) {
            return Err(Error::Config("hidden must be divisible by 8".into()));
        }
        if !self.hidden.is_multiple_of(self.hyper_heads) {
            return Err(Error::Config(
                "hyper_heads must divide the hidden size".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.learning_rate <= 0.0 || self.bin_width <= 0.0 {
            return Err(Error::Config(
                "learning_rate and bin_width must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            num_bins: self.num_bins,
            bin_width: self.bin_width,
        }
    }

    fn head_input_dim(&self) -> usize {
        match self.wiring {
            Wiring::Hierarchical => self.hidden,
            Wiring::Parallel => 2 * self.hidden,
        }
    }
}

#[derive(Clone)]
enum HyperStack {
    SelfAttn(Vec<SelfAttnParams>),
    Additive(Vec<AdditiveParams>),
}

#[derive(Clone)]
struct ModelWiring {
    word_proj: ParamId,
    encoder: EncoderParams,
    blocks: Vec<HeteroBlockParams>,
    hyper: HyperStack,
    head_proj: ParamId,
    head_out: ParamId,
}

/// A document prepared for the forward pass: truncated, tokenized,
/// and with both graphs built.
pub struct DocBundle {
    pub id: String,
    pub batch: SentenceBatch,
    pub graph: HeteroGraph,
    pub hyper: Hypergraph,
    pub labels: Option<Vec<u8>>,
    /// The truncated document, kept for summary text and scoring.
    pub doc: Document,
}

/// Truncate a document and build its token batch and graphs.
pub fn build_bundle(
    doc: &Document,
    vocab: &Vocabulary,
    idf: &IdfTable,
    config: &ModelConfig,
) -> Result<DocBundle> {
    let doc = truncate(doc.clone(), config.max_sentences, config.max_tokens);
    let batch = SentenceBatch::from_document(&doc, vocab);
    let graph = build_hetero_graph(&doc, vocab, idf, &config.graph_config());
    let hyper = build_hypergraph(&doc);
    if graph.sent_count != batch.n_sentences() || hyper.n_nodes != batch.n_sentences() {
        return Err(Error::Graph(format!(
            "document {}: graph/batch sentence counts disagree",
            doc.id
        )));
    }
    Ok(DocBundle {
        id: doc.id.clone(),
        batch,
        labels: doc.oracle_labels.clone(),
        graph,
        hyper,
        doc,
    })
}

/// A normalized attention distribution exposed for verification.
pub enum AttnProbe {
    /// Column of weights normalized within segments.
    Segmented {
        name: String,
        alpha: NodeId,
        seg: Vec<usize>,
        n_segments: usize,
    },
    /// Row-stochastic matrix (each row sums to one).
    Rows { name: String, probs: NodeId },
}

pub struct ForwardOut {
    /// Scores in (0, 1), one row per sentence.
    pub scores: NodeId,
    pub probes: Vec<AttnProbe>,
    /// Embedding gather leaves with their vocabulary rows, for sparse
    /// embedding updates.
    pub token_gather: Option<(NodeId, Vec<usize>)>,
    pub word_gather: Option<(NodeId, Vec<usize>)>,
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub embeddings: EmbeddingTable,
    wiring: ModelWiring,
}

impl Model {
    /// Build a model with fresh parameters; layout and initialization
    /// are fully determined by the config and the embedding table.
    pub fn new(config: ModelConfig, mut embeddings: EmbeddingTable) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.word_dim {
            return Err(Error::Model(format!(
                "embedding width {} does not match word_dim {}",
                embeddings.dim(),
                config.word_dim
            )));
        }
        embeddings.trainable = config.train_embeddings;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let word_proj =
            params.register_xavier("word_proj", config.word_dim, config.hidden, &mut rng);
        let encoder = EncoderParams::register(&mut params, &mut rng, config.word_dim, config.hidden);
        let mut blocks = Vec::new();
        for (i, &heads) in config.hetero_heads.iter().enumerate() {
            blocks.push(HeteroBlockParams::register(
                &mut params,
                &mut rng,
                &format!("het{i}"),
                config.hidden,
                heads,
                config.edge_dim,
                config.num_bins,
                config.ffn_inner,
            ));
        }
        let hyper = match config.hyper_kind {
            HyperKind::SelfAttn => HyperStack::SelfAttn(
                (0..config.hyper_layers)
                    .map(|i| {
                        SelfAttnParams::register(
                            &mut params,
                            &mut rng,
                            &format!("hyp{i}"),
                            config.hidden,
                            config.hyper_heads,
                        )
                    })
                    .collect(),
            ),
            HyperKind::Additive => HyperStack::Additive(
                (0..config.hyper_layers)
                    .map(|i| {
                        AdditiveParams::register(&mut params, &mut rng, &format!("hyp{i}"), config.hidden)
                    })
                    .collect(),
            ),
        };
        let head_proj = params.register_xavier(
            "head.proj",
            config.head_input_dim(),
            config.hidden,
            &mut rng,
        );
        let head_out = params.register_xavier("head.out", config.hidden, 1, &mut rng);
        Ok(Self {
            config,
            params,
            embeddings,
            wiring: ModelWiring {
                word_proj,
                encoder,
                blocks,
                hyper,
                head_proj,
                head_out,
            },
        })
    }

    /// Encoder output plus graph branches per the configured wiring.
    pub fn forward(
        &self,
        t: &mut Tape,
        bundle: &DocBundle,
        mut dropout: Option<&mut Dropout>,
    ) -> ForwardOut {
        let w = &self.wiring;
        let mut probes = Vec::new();

        let tok_rows = self.embeddings.gather(&bundle.batch.flat_ids);
        let tok_leaf = t.constant(tok_rows);
        let x_sen = encode_sentences(t, &self.params, &w.encoder, tok_leaf, &bundle.batch);
        let token_gather = Some((tok_leaf, bundle.batch.flat_ids.clone()));

        let mut word_gather = None;
        let hetero_branch = |t: &mut Tape,
                             probes: &mut Vec<AttnProbe>,
                             word_gather: &mut Option<(NodeId, Vec<usize>)>,
                             dropout: &mut Option<&mut Dropout>,
                             x: NodeId|
         -> NodeId {
            let word_ids: Vec<usize> = bundle.graph.word_ids.iter().map(|&i| i as usize).collect();
            let word_rows = self.embeddings.gather(&word_ids);
            let word_leaf = t.constant(word_rows);
            *word_gather = Some((word_leaf, word_ids));
            let wp = t.param(w.word_proj, self.params.get(w.word_proj).clone());
            let mut h_w = t.matmul(word_leaf, wp);
            let mut h_s = x;
            let to_words = DirectedEdges::word_targets(&bundle.graph);
            let to_sents = DirectedEdges::sentence_targets(&bundle.graph);
            for (i, block) in w.blocks.iter().enumerate() {
                let out = hetero_block(t, &self.params, block, h_w, h_s, &bundle.graph, dropout.as_deref_mut());
                for (h, &alpha) in out.word_alphas.iter().enumerate() {
                    probes.push(AttnProbe::Segmented {
                        name: format!("hetero{i}.word.h{h}"),
                        alpha,
                        seg: to_words.targets.clone(),
                        n_segments: to_words.n_targets,
                    });
                }
                for (h, &alpha) in out.sent_alphas.iter().enumerate() {
                    probes.push(AttnProbe::Segmented {
                        name: format!("hetero{i}.sent.h{h}"),
                        alpha,
                        seg: to_sents.targets.clone(),
                        n_segments: to_sents.n_targets,
                    });
                }
                h_w = out.word_feats;
                h_s = out.sent_feats;
            }
            h_s
        };

        let hyper_branch = |t: &mut Tape,
                            probes: &mut Vec<AttnProbe>,
                            dropout: &mut Option<&mut Dropout>,
                            mut h: NodeId|
         -> NodeId {
            let pairs = IncidencePairs::build(&bundle.hyper);
            match &w.hyper {
                HyperStack::SelfAttn(layers) => {
                    for (i, layer) in layers.iter().enumerate() {
                        let out = self_attn_layer(
                            t,
                            &self.params,
                            layer,
                            h,
                            &bundle.hyper,
                            self.config.masked_edge_attention,
                            dropout.as_deref_mut(),
                        );
                        probes.push(AttnProbe::Segmented {
                            name: format!("hyper{i}.node"),
                            alpha: out.node_alpha,
                            seg: pairs.edge_of.clone(),
                            n_segments: bundle.hyper.n_edges(),
                        });
                        for (hd, &p) in out.edge_probs.iter().enumerate() {
                            probes.push(AttnProbe::Rows {
                                name: format!("hyper{i}.edge.h{hd}"),
                                probs: p,
                            });
                        }
                        h = out.output;
                    }
                }
                HyperStack::Additive(layers) => {
                    for (i, layer) in layers.iter().enumerate() {
                        let out =
                            additive_layer(t, &self.params, layer, h, &bundle.hyper, dropout.as_deref_mut());
                        probes.push(AttnProbe::Segmented {
                            name: format!("hyper{i}.node"),
                            alpha: out.node_alpha,
                            seg: pairs.edge_of.clone(),
                            n_segments: bundle.hyper.n_edges(),
                        });
                        probes.push(AttnProbe::Segmented {
                            name: format!("hyper{i}.edge"),
                            alpha: out.edge_alpha,
                            seg: pairs.node_of.clone(),
                            n_segments: bundle.hyper.n_nodes,
                        });
                        h = out.output;
                    }
                }
            }
            h
        };

        let head_in = match self.config.wiring {
            Wiring::Hierarchical => {
                let mut h = x_sen;
                if self.config.use_hetero {
                    h = hetero_branch(t, &mut probes, &mut word_gather, &mut dropout, h);
                }
                if self.config.use_hyper {
                    h = hyper_branch(t, &mut probes, &mut dropout, h);
                }
                h
            }
            Wiring::Parallel => {
                let a = if self.config.use_hetero {
                    hetero_branch(t, &mut probes, &mut word_gather, &mut dropout, x_sen)
                } else {
                    x_sen
                };
                let b = if self.config.use_hyper {
                    hyper_branch(t, &mut probes, &mut dropout, x_sen)
                } else {
                    x_sen
                };
                t.concat_cols(&[a, b])
            }
        };

        let head_proj = t.param(w.head_proj, self.params.get(w.head_proj).clone());
        let head_out = t.param(w.head_out, self.params.get(w.head_out).clone());
        let projected = t.matmul(head_in, head_proj);
        let normed = t.layer_norm_rows(projected, 1e-5);
        let logits = t.matmul(normed, head_out);
        let scores = t.sigmoid(logits);

        ForwardOut {
            scores,
            probes,
            token_gather,
            word_gather,
        }
    }

    /// Accumulate sparse embedding-row gradients from a completed
    /// backward pass into `into`.
    pub fn embedding_row_grads(
        &self,
        grads: &Grads,
        out: &ForwardOut,
        into: &mut HashMap<usize, ndarray::Array1<f64>>,
    ) {
        if !self.embeddings.trainable {
            return;
        }
        for gather in [&out.token_gather, &out.word_gather].into_iter().flatten() {
            if let Some(g) = grads.get(gather.0) {
                EmbeddingTable::accumulate_row_grads(&gather.1, g, into);
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.ids().collect()
    }
}

/// Mean binary cross-entropy between scores in (0, 1) and 0/1 labels.
pub fn bce_loss(t: &mut Tape, scores: NodeId, labels: &[u8]) -> Result<NodeId> {
    let n = t.value(scores).nrows();
    if n != labels.len() {
        return Err(Error::Model(format!(
            "loss: {n} scores but {} labels",
            labels.len()
        )));
    }
    let y = Array2::from_shape_fn((n, 1), |(i, _)| f64::from(labels[i]));
    let y_inv = y.mapv(|v| 1.0 - v);
    let y = t.constant(y);
    let y_inv = t.constant(y_inv);
    let ln_p = t.ln_clamped(scores, 1e-12);
    let q = t.affine(scores, -1.0, 1.0);
    let ln_q = t.ln_clamped(q, 1e-12);
    let pos = t.mul_elem(y, ln_p);
    let neg = t.mul_elem(y_inv, ln_q);
    let both = t.add(pos, neg);
    let total = t.sum_all(both);
    Ok(t.affine(total, -1.0 / n as f64, 0.0))
}

/// Everything needed to resume training or run inference.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub idf: IdfTable,
    pub params: ParamSet,
    pub embeddings: EmbeddingTable,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub val_loss: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        bincode::serialize_into(BufWriter::new(file), self)
            .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut cp: Self = bincode::deserialize_from(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
        if cp.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {FORMAT_VERSION})",
                cp.version
            )));
        }
        cp.vocab.reindex();
        Ok(cp)
    }

    /// Rebuild the model around the stored tensors.
    pub fn into_model(self) -> Result<(Model, Option<Adam>, Vocabulary, IdfTable)> {
        let mut model = Model::new(self.config, self.embeddings)?;
        let layout_matches = model.params.len() == self.params.len()
            && model
                .params
                .ids()
                .all(|id| model.params.name(id) == self.params.name(id));
        if !layout_matches {
            return Err(Error::Checkpoint(
                "stored parameters do not match the configured layout".into(),
            ));
        }
        model.params = self.params;
        Ok((model, self.optimizer, self.vocab, self.idf))
    }
}
