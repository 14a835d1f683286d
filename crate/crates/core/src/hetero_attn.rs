//! Multi-head attention over the bipartite word-sentence graph.
//!
//! One directed pass updates a target node set (words or sentences) from
//! its neighbors on the other side. An attention score per edge combines
//! projected target and source features with a learned embedding of the
//! edge's tf-idf bin; scores normalize per target, heads aggregate
//! projected source features, and a feed-forward layer plus residual
//! produces the update. A block runs the word-update pass first, then
//! updates sentences from the updated words.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{maybe_apply, Dropout};
use crate::graph::HeteroGraph;
use crate::params::{ParamId, ParamSet};
use crate::tape::{NodeId, Tape};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Edge list for one attention direction.
#[derive(Debug, Clone)]
pub struct DirectedEdges {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub bins: Vec<usize>,
    pub n_targets: usize,
    pub n_sources: usize,
}

impl DirectedEdges {
    /// Words as targets, sentences as sources.
    pub fn word_targets(g: &HeteroGraph) -> Self {
        Self {
            targets: g.edges.iter().map(|e| e.word as usize).collect(),
            sources: g.edges.iter().map(|e| e.sent as usize).collect(),
            bins: g.edges.iter().map(|e| e.bin as usize).collect(),
            n_targets: g.word_count(),
            n_sources: g.sent_count,
        }
    }

    /// Sentences as targets, words as sources.
    pub fn sentence_targets(g: &HeteroGraph) -> Self {
        Self {
            targets: g.edges.iter().map(|e| e.sent as usize).collect(),
            sources: g.edges.iter().map(|e| e.word as usize).collect(),
            bins: g.edges.iter().map(|e| e.bin as usize).collect(),
            n_targets: g.sent_count,
            n_sources: g.word_count(),
        }
    }

    fn degree_mask(&self) -> Array2<f64> {
        let mut mask = Array2::zeros((self.n_targets, 1));
        for &t in &self.targets {
            mask[(t, 0)] = 1.0;
        }
        mask
    }
}

/// Parameters of one directed attention pass. Heads live in column
/// blocks of width `head_dim`; the attention vector has one column per
/// head over [target-projection, source-projection, edge embedding].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeteroAttnParams {
    pub w_s: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_a: ParamId,
    pub edge_emb: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
    pub edge_dim: usize,
}

impl HeteroAttnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        hidden: usize,
        heads: usize,
        edge_dim: usize,
        num_bins: usize,
        ffn_inner: usize,
    ) -> Self {
        // Heads that do not divide the hidden size get the floored share;
        // the feed-forward layer restores the full width.
        let head_dim = hidden / heads;
        assert!(head_dim >= 1, "more heads than feature dimensions");
        let attn_width = heads * head_dim;
        Self {
            w_s: ps.register_xavier(&format!("{prefix}.w_s"), hidden, attn_width, rng),
            w_k: ps.register_xavier(&format!("{prefix}.w_k"), hidden, attn_width, rng),
            w_v: ps.register_xavier(&format!("{prefix}.w_v"), hidden, attn_width, rng),
            w_a: ps.register_xavier(
                &format!("{prefix}.w_a"),
                2 * head_dim + edge_dim,
                heads,
                rng,
            ),
            edge_emb: ps.register_xavier(&format!("{prefix}.edge_emb"), num_bins, edge_dim, rng),
            ffn_w1: ps.register_xavier(&format!("{prefix}.ffn_w1"), attn_width, ffn_inner, rng),
            ffn_b1: ps.register_zeros(&format!("{prefix}.ffn_b1"), 1, ffn_inner),
            ffn_w2: ps.register_xavier(&format!("{prefix}.ffn_w2"), ffn_inner, hidden, rng),
            ffn_b2: ps.register_zeros(&format!("{prefix}.ffn_b2"), 1, hidden),
            heads,
            head_dim,
            hidden,
            edge_dim,
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_s, self.w_k, self.w_v, self.w_a, self.edge_emb, self.ffn_w1, self.ffn_b1,
            self.ffn_w2, self.ffn_b2,
        ]
    }
}

pub struct HeteroAttnOut {
    pub output: NodeId,
    /// Per-head edge attention weights, each an E x 1 column normalized
    /// over every target's incident edges.
    pub head_alphas: Vec<NodeId>,
}

/// One directed attention pass. Targets without incident edges pass
/// through unchanged (the aggregation and feed-forward branch is masked
/// out, leaving only the residual).
pub fn hetero_attention(
    t: &mut Tape,
    ps: &ParamSet,
    p: &HeteroAttnParams,
    h_targets: NodeId,
    h_sources: NodeId,
    edges: &DirectedEdges,
    mut dropout: Option<&mut Dropout>,
) -> HeteroAttnOut {
    assert_eq!(t.value(h_targets).dim(), (edges.n_targets, p.hidden));
    assert_eq!(t.value(h_sources).dim(), (edges.n_sources, p.hidden));
    for (name, node) in [("targets", h_targets), ("sources", h_sources)] {
        if let Some(pos) = t.value(node).iter().position(|v| !v.is_finite()) {
            let row = pos / p.hidden;
            panic!("non-finite input feature in {name} node {row}");
        }
    }

    let w_s = t.param(p.w_s, ps.get(p.w_s).clone());
    let w_k = t.param(p.w_k, ps.get(p.w_k).clone());
    let w_v = t.param(p.w_v, ps.get(p.w_v).clone());
    let w_a = t.param(p.w_a, ps.get(p.w_a).clone());
    let emb = t.param(p.edge_emb, ps.get(p.edge_emb).clone());

    let proj_t = t.matmul(h_targets, w_s);
    let proj_s = t.matmul(h_sources, w_k);
    let proj_v = t.matmul(h_sources, w_v);

    let tgt_rows = t.gather_rows(proj_t, &edges.targets);
    let src_rows = t.gather_rows(proj_s, &edges.sources);
    let val_rows = t.gather_rows(proj_v, &edges.sources);
    let edge_rows = t.gather_rows(emb, &edges.bins);

    let mut head_outputs = Vec::with_capacity(p.heads);
    let mut head_alphas = Vec::with_capacity(p.heads);
    for k in 0..p.heads {
        let lo = k * p.head_dim;
        let hi = lo + p.head_dim;
        let tgt_k = t.slice_cols(tgt_rows, lo, hi);
        let src_k = t.slice_cols(src_rows, lo, hi);
        let feat = t.concat_cols(&[tgt_k, src_k, edge_rows]);
        let a_col = t.slice_cols(w_a, k, k + 1);
        let score = t.matmul(feat, a_col);
        let z = t.leaky_relu(score, LEAKY_SLOPE);
        let alpha = t.segment_softmax(z, &edges.targets, edges.n_targets);
        head_alphas.push(alpha);
        let alpha_used = maybe_apply(&mut dropout, t, alpha);
        let val_k = t.slice_cols(val_rows, lo, hi);
        let weighted = t.mul_col(val_k, alpha_used);
        let agg = t.segment_sum(weighted, &edges.targets, edges.n_targets);
        head_outputs.push(t.elu(agg));
    }
    let u = t.concat_cols(&head_outputs);

    let ffn_w1 = t.param(p.ffn_w1, ps.get(p.ffn_w1).clone());
    let ffn_b1 = t.param(p.ffn_b1, ps.get(p.ffn_b1).clone());
    let ffn_w2 = t.param(p.ffn_w2, ps.get(p.ffn_w2).clone());
    let ffn_b2 = t.param(p.ffn_b2, ps.get(p.ffn_b2).clone());
    let h1 = t.matmul(u, ffn_w1);
    let h1 = t.add_row(h1, ffn_b1);
    let h1 = t.relu(h1);
    let h1 = maybe_apply(&mut dropout, t, h1);
    let h2 = t.matmul(h1, ffn_w2);
    let ffn = t.add_row(h2, ffn_b2);

    let mask = t.constant(edges.degree_mask());
    let gated = t.mul_col(ffn, mask);
    let output = t.add(h_targets, gated);
    HeteroAttnOut {
        output,
        head_alphas,
    }
}

/// Parameters for one block: a word-update pass then a sentence-update
/// pass, unshared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeteroBlockParams {
    pub word_update: HeteroAttnParams,
    pub sent_update: HeteroAttnParams,
}

impl HeteroBlockParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        hidden: usize,
        heads: usize,
        edge_dim: usize,
        num_bins: usize,
        ffn_inner: usize,
    ) -> Self {
        Self {
            word_update: HeteroAttnParams::register(
                ps,
                rng,
                &format!("{prefix}.word"),
                hidden,
                heads,
                edge_dim,
                num_bins,
                ffn_inner,
            ),
            sent_update: HeteroAttnParams::register(
                ps,
                rng,
                &format!("{prefix}.sent"),
                hidden,
                heads,
                edge_dim,
                num_bins,
                ffn_inner,
            ),
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut ids = self.word_update.all_ids();
        ids.extend(self.sent_update.all_ids());
        ids
    }
}

pub struct HeteroBlockOut {
    pub word_feats: NodeId,
    pub sent_feats: NodeId,
    pub word_alphas: Vec<NodeId>,
    pub sent_alphas: Vec<NodeId>,
}

/// Words aggregate from sentences first; sentences then aggregate from
/// the updated words.
pub fn hetero_block(
    t: &mut Tape,
    ps: &ParamSet,
    p: &HeteroBlockParams,
    word_feats: NodeId,
    sent_feats: NodeId,
    graph: &HeteroGraph,
    mut dropout: Option<&mut Dropout>,
) -> HeteroBlockOut {
    let to_words = DirectedEdges::word_targets(graph);
    let words = hetero_attention(
        t,
        ps,
        &p.word_update,
        word_feats,
        sent_feats,
        &to_words,
        dropout.as_deref_mut(),
    );
    let to_sents = DirectedEdges::sentence_targets(graph);
    let sents = hetero_attention(
        t,
        ps,
        &p.sent_update,
        sent_feats,
        words.output,
        &to_sents,
        dropout,
    );
    HeteroBlockOut {
        word_feats: words.output,
        sent_feats: sents.output,
        word_alphas: words.head_alphas,
        sent_alphas: sents.head_alphas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use crate::graph::Edge;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    fn params(ps: &mut ParamSet, hidden: usize, heads: usize) -> HeteroAttnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        HeteroAttnParams::register(ps, &mut rng, "h", hidden, heads, 6, 10, 24)
    }

    fn edges(list: &[(usize, usize, usize)], n_t: usize, n_s: usize) -> DirectedEdges {
        DirectedEdges {
            targets: list.iter().map(|e| e.0).collect(),
            sources: list.iter().map(|e| e.1).collect(),
            bins: list.iter().map(|e| e.2).collect(),
            n_targets: n_t,
            n_sources: n_s,
        }
    }

    #[test]
    fn singleton_neighbor_gets_full_attention() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let ht = t.constant(rand_mat(&mut rng, 2, 8));
        let hs = t.constant(rand_mat(&mut rng, 3, 8));
        let e = edges(&[(0, 2, 1), (1, 0, 3), (1, 1, 0)], 2, 3);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        for alpha in &out.head_alphas {
            let a = t.value(*alpha);
            assert!((a[(0, 0)] - 1.0).abs() < 1e-12);
            assert!((a[(1, 0)] + a[(2, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_neighbors_and_bins_split_evenly() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let ht = t.constant(rand_mat(&mut rng, 1, 8));
        let src_row = rand_mat(&mut rng, 1, 8);
        let mut hs_mat = Array2::zeros((2, 8));
        hs_mat.row_mut(0).assign(&src_row.row(0));
        hs_mat.row_mut(1).assign(&src_row.row(0));
        let hs = t.constant(hs_mat);
        let e = edges(&[(0, 0, 4), (0, 1, 4)], 1, 2);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        for alpha in &out.head_alphas {
            let a = t.value(*alpha);
            assert!((a[(0, 0)] - 0.5).abs() < 1e-12);
            assert!((a[(1, 0)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_target_passes_through_exactly() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = Tape::new();
        let ht_mat = rand_mat(&mut rng, 3, 8);
        let ht = t.constant(ht_mat.clone());
        let hs = t.constant(rand_mat(&mut rng, 2, 8));
        // Target 1 has no incident edge.
        let e = edges(&[(0, 0, 1), (2, 1, 2)], 3, 2);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        let y = t.value(out.output);
        assert_eq!(y.row(1), ht_mat.row(1));
        assert_ne!(y.row(0), ht_mat.row(0));
    }

    #[test]
    fn zeroed_weights_reduce_to_identity() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        for id in p.all_ids() {
            ps.get_mut(id).fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let ht_mat = rand_mat(&mut rng, 2, 8);
        let ht = t.constant(ht_mat.clone());
        let hs = t.constant(rand_mat(&mut rng, 2, 8));
        let e = edges(&[(0, 0, 1), (1, 1, 2)], 2, 2);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        assert_eq!(t.value(out.output), &ht_mat);
    }

    #[test]
    fn edge_bins_change_attention() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ht_mat = rand_mat(&mut rng, 1, 8);
        let hs_mat = rand_mat(&mut rng, 2, 8);

        let alphas = |bins: [usize; 2]| {
            let mut t = Tape::new();
            let ht = t.constant(ht_mat.clone());
            let hs = t.constant(hs_mat.clone());
            let e = edges(&[(0, 0, bins[0]), (0, 1, bins[1])], 1, 2);
            let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
            t.value(out.head_alphas[0]).clone()
        };
        let same = alphas([2, 2]);
        let diff = alphas([2, 7]);
        assert_ne!(same, diff);
    }

    #[test]
    fn block_runs_word_pass_before_sentence_pass() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = HeteroBlockParams::register(&mut ps, &mut rng, "b0", 8, 2, 6, 10, 24);
        let g = HeteroGraph {
            word_tokens: vec!["w0".into(), "w1".into(), "w2".into()],
            word_ids: vec![2, 3, 4],
            sent_count: 2,
            edges: vec![
                Edge { sent: 0, word: 0, weight: 0.5, bin: 2 },
                Edge { sent: 0, word: 1, weight: 0.1, bin: 0 },
                Edge { sent: 1, word: 1, weight: 0.9, bin: 3 },
                Edge { sent: 1, word: 2, weight: 0.4, bin: 1 },
            ],
        };
        let mut t = Tape::new();
        let w = t.constant(rand_mat(&mut rng, 3, 8));
        let s = t.constant(rand_mat(&mut rng, 2, 8));
        let out = hetero_block(&mut t, &ps, &block, w, s, &g, None);
        assert_eq!(t.value(out.sent_feats).dim(), (2, 8));
        assert_eq!(t.value(out.word_feats).dim(), (3, 8));
        assert_eq!(out.word_alphas.len(), 2);
        assert!(t.value(out.sent_feats).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_rows_sum_to_one_per_target() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut t = Tape::new();
        let ht = t.constant(rand_mat(&mut rng, 4, 16));
        let hs = t.constant(rand_mat(&mut rng, 5, 16));
        let mut list = Vec::new();
        for tgt in 0..4 {
            for src in 0..5 {
                if (tgt + src) % 2 == 0 {
                    list.push((tgt, src, (tgt + src) % 10));
                }
            }
        }
        let e = edges(&list, 4, 5);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        for alpha in &out.head_alphas {
            let a = t.value(*alpha);
            let mut sums = vec![0.0; 4];
            for (row, &tgt) in e.targets.iter().enumerate() {
                sums[tgt] += a[(row, 0)];
            }
            for s in sums {
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn head_count_need_not_divide_hidden() {
        let mut ps = ParamSet::new();
        // 6 heads on 16 dims: head_dim 2, attention width 12, FFN back to 16.
        let p = params(&mut ps, 16, 6);
        assert_eq!(p.head_dim, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = Tape::new();
        let ht = t.constant(rand_mat(&mut rng, 2, 16));
        let hs = t.constant(rand_mat(&mut rng, 2, 16));
        let e = edges(&[(0, 0, 0), (1, 1, 1)], 2, 2);
        let out = hetero_attention(&mut t, &ps, &p, ht, hs, &e, None);
        assert_eq!(t.value(out.output).dim(), (2, 16));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut ps = ParamSet::new();
        let p = params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ht_mat = rand_mat(&mut rng, 3, 8);
        let hs_mat = rand_mat(&mut rng, 5, 8);
        let e = edges(
            &[(0, 0, 1), (0, 1, 2), (1, 2, 0), (1, 3, 5), (2, 4, 9), (2, 0, 3)],
            3,
            5,
        );
        let weights = rand_mat(&mut rng, 3, 8);

        let forward = |ps: &ParamSet| {
            let mut t = Tape::new();
            let ht = t.constant(ht_mat.clone());
            let hs = t.constant(hs_mat.clone());
            let out = hetero_attention(&mut t, ps, &p, ht, hs, &e, None);
            let wc = t.constant(weights.clone());
            let prod = t.mul_elem(out.output, wc);
            let loss = t.sum_all(prod);
            let grads = t.backward(loss);
            (t.value(loss)[(0, 0)], t.param_grads(&grads))
        };

        let (_, analytic) = forward(&ps);
        let ids = p.all_ids();
        let res = check_params(&mut ps, &ids, &analytic, |ps| forward(ps).0, 1e-5, 0, 0);
        assert!(res.passes(1e-4), "{} at {}", res.max_rel_err, res.worst_param);
    }
}
