//! Section-hypergraph attention over sentence features.
//!
//! A layer runs in two phases. Node-level attention pools each
//! hyperedge's member sentences into a hyperedge feature. Edge-level
//! self-attention then queries from sentences and keys/values from the
//! hyperedge features (scaled dot product, multi-head, by default masked
//! to incident hyperedges). A fusion step recombines the previous
//! sentence state with the attended one and projects back to the hidden
//! width so layers stack.
//!
//! The baseline variant replaces the edge-level phase with additive
//! attention that pushes node and hyperedge features through one shared
//! projection, the design the self-attention layer improves on.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{maybe_apply, Dropout};
use crate::graph::Hypergraph;
use crate::hetero_attn::LEAKY_SLOPE;
use crate::params::{ParamId, ParamSet};
use crate::tape::{NodeId, Tape};

/// Flat (hyperedge, node) incidence pairs, hyperedge-major.
pub struct IncidencePairs {
    pub edge_of: Vec<usize>,
    pub node_of: Vec<usize>,
}

impl IncidencePairs {
    pub fn build(hg: &Hypergraph) -> Self {
        let mut edge_of = Vec::new();
        let mut node_of = Vec::new();
        for (j, members) in hg.members.iter().enumerate() {
            for &k in members {
                edge_of.push(j);
                node_of.push(k);
            }
        }
        Self { edge_of, node_of }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfAttnParams {
    /// Node-level: score projection, scoring vector, value projection.
    pub w_p: ParamId,
    pub w_h: ParamId,
    pub w_n: ParamId,
    /// Edge-level query/key/value projections, heads in column blocks.
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Fusion branch weights and the projection back to hidden width.
    pub w_1: ParamId,
    pub w_2: ParamId,
    pub w_proj: ParamId,
    pub n_heads: usize,
    pub hidden: usize,
}

impl SelfAttnParams {
    pub fn register(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        hidden: usize,
        n_heads: usize,
    ) -> Self {
        assert!(
            hidden.is_multiple_of(n_heads),
            "edge-level heads must divide the hidden size"
        );
        let reg = |ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize| {
            ps.register_xavier(&format!("{prefix}.{name}"), r, c, rng)
        };
        Self {
            w_p: reg(ps, rng, "w_p", hidden, hidden),
            w_h: reg(ps, rng, "w_h", hidden, 1),
            w_n: reg(ps, rng, "w_n", hidden, hidden),
            w_q: reg(ps, rng, "w_q", hidden, hidden),
            w_k: reg(ps, rng, "w_k", hidden, hidden),
            w_v: reg(ps, rng, "w_v", hidden, hidden),
            w_1: reg(ps, rng, "w_1", hidden, hidden),
            w_2: reg(ps, rng, "w_2", hidden, hidden),
            w_proj: reg(ps, rng, "w_proj", 2 * hidden, hidden),
            n_heads,
            hidden,
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_p, self.w_h, self.w_n, self.w_q, self.w_k, self.w_v, self.w_1, self.w_2,
            self.w_proj,
        ]
    }

    fn node_level_ids(&self) -> (ParamId, ParamId, ParamId) {
        (self.w_p, self.w_h, self.w_n)
    }
}

pub struct NodeLevelOut {
    /// Hyperedge features, one row per hyperedge.
    pub f_edge: NodeId,
    /// Per-pair attention, normalized within each hyperedge.
    pub alpha: NodeId,
}

/// Pool member sentences into hyperedge features: score each member with
/// a learned vector over a projected representation, softmax within the
/// hyperedge, and aggregate value-projected members.
pub fn node_level_attention(
    t: &mut Tape,
    ps: &ParamSet,
    ids: (ParamId, ParamId, ParamId),
    h_sen: NodeId,
    hg: &Hypergraph,
    pairs: &IncidencePairs,
    mut dropout: Option<&mut Dropout>,
) -> NodeLevelOut {
    let (w_p_id, w_h_id, w_n_id) = ids;
    let w_p = t.param(w_p_id, ps.get(w_p_id).clone());
    let w_h = t.param(w_h_id, ps.get(w_h_id).clone());
    let w_n = t.param(w_n_id, ps.get(w_n_id).clone());

    let proj = t.matmul(h_sen, w_p);
    let u = t.leaky_relu(proj, LEAKY_SLOPE);
    let scores = t.matmul(u, w_h);
    let score_pairs = t.gather_rows(scores, &pairs.node_of);
    let alpha = t.segment_softmax(score_pairs, &pairs.edge_of, hg.n_edges());

    let values = t.matmul(h_sen, w_n);
    let value_pairs = t.gather_rows(values, &pairs.node_of);
    let alpha_used = maybe_apply(&mut dropout, t, alpha);
    let weighted = t.mul_col(value_pairs, alpha_used);
    let pooled = t.segment_sum(weighted, &pairs.edge_of, hg.n_edges());
    let f_edge = t.leaky_relu(pooled, LEAKY_SLOPE);
    NodeLevelOut { f_edge, alpha }
}

pub struct EdgeLevelOut {
    pub output: NodeId,
    /// Per-head attention over hyperedges, rows = sentences.
    pub head_probs: Vec<NodeId>,
}

/// Scaled dot-product attention with queries from sentence states and
/// keys/values from hyperedge features. When masked, each sentence
/// attends only to its incident hyperedges.
#[allow(clippy::too_many_arguments)]
pub fn edge_level_attention(
    t: &mut Tape,
    ps: &ParamSet,
    p: &SelfAttnParams,
    h_prev: NodeId,
    f_edge: NodeId,
    hg: &Hypergraph,
    masked: bool,
    mut dropout: Option<&mut Dropout>,
) -> EdgeLevelOut {
    let m = hg.n_nodes;
    let n_e = hg.n_edges();
    let dk = p.hidden / p.n_heads;

    let w_q = t.param(p.w_q, ps.get(p.w_q).clone());
    let w_k = t.param(p.w_k, ps.get(p.w_k).clone());
    let w_v = t.param(p.w_v, ps.get(p.w_v).clone());
    let q = t.matmul(h_prev, w_q);
    let k = t.matmul(f_edge, w_k);
    let v = t.matmul(f_edge, w_v);

    let mask = if masked {
        hg.incidence_dense()
    } else {
        Array2::from_elem((m, n_e), 1.0)
    };

    let mut heads = Vec::with_capacity(p.n_heads);
    let mut head_probs = Vec::with_capacity(p.n_heads);
    for h in 0..p.n_heads {
        let lo = h * dk;
        let hi = lo + dk;
        let q_h = t.slice_cols(q, lo, hi);
        let k_h = t.slice_cols(k, lo, hi);
        let v_h = t.slice_cols(v, lo, hi);
        let k_t = t.transpose(k_h);
        let logits = t.matmul(q_h, k_t);
        let scaled = t.affine(logits, 1.0 / (dk as f64).sqrt(), 0.0);
        let probs = t.masked_softmax_rows(scaled, &mask);
        head_probs.push(probs);
        let probs_used = maybe_apply(&mut dropout, t, probs);
        heads.push(t.matmul(probs_used, v_h));
    }
    let output = t.concat_cols(&heads);
    EdgeLevelOut { output, head_probs }
}

/// Recombine the previous sentence state with the attended state:
/// branch-project both, concatenate, activate, project back to hidden.
pub fn fuse(
    t: &mut Tape,
    ps: &ParamSet,
    p: &SelfAttnParams,
    h_prev: NodeId,
    h_att: NodeId,
) -> NodeId {
    let w_1 = t.param(p.w_1, ps.get(p.w_1).clone());
    let w_2 = t.param(p.w_2, ps.get(p.w_2).clone());
    let w_proj = t.param(p.w_proj, ps.get(p.w_proj).clone());
    let a = t.matmul(h_prev, w_1);
    let b = t.matmul(h_att, w_2);
    let cat = t.concat_cols(&[a, b]);
    let act = t.leaky_relu(cat, LEAKY_SLOPE);
    t.matmul(act, w_proj)
}

pub struct SelfAttnLayerOut {
    pub output: NodeId,
    pub node_alpha: NodeId,
    pub edge_probs: Vec<NodeId>,
}

pub fn self_attn_layer(
    t: &mut Tape,
    ps: &ParamSet,
    p: &SelfAttnParams,
    h_prev: NodeId,
    hg: &Hypergraph,
    masked: bool,
    mut dropout: Option<&mut Dropout>,
) -> SelfAttnLayerOut {
    let pairs = IncidencePairs::build(hg);
    let node = node_level_attention(
        t,
        ps,
        p.node_level_ids(),
        h_prev,
        hg,
        &pairs,
        dropout.as_deref_mut(),
    );
    let edge = edge_level_attention(t, ps, p, h_prev, node.f_edge, hg, masked, dropout);
    let output = fuse(t, ps, p, h_prev, edge.output);
    SelfAttnLayerOut {
        output,
        node_alpha: node.alpha,
        edge_probs: edge.head_probs,
    }
}

/// Baseline hypergraph attention parameters: node-level pooling plus an
/// additive edge-to-node pass that reuses one shared projection for both
/// node and hyperedge features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveParams {
    pub w_p: ParamId,
    pub w_h: ParamId,
    pub w_n: ParamId,
    pub w_shared: ParamId,
    pub att: ParamId,
    pub hidden: usize,
}

impl AdditiveParams {
    pub fn register(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        hidden: usize,
    ) -> Self {
        let reg = |ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize| {
            ps.register_xavier(&format!("{prefix}.{name}"), r, c, rng)
        };
        Self {
            w_p: reg(ps, rng, "w_p", hidden, hidden),
            w_h: reg(ps, rng, "w_h", hidden, 1),
            w_n: reg(ps, rng, "w_n", hidden, hidden),
            w_shared: reg(ps, rng, "w_shared", hidden, hidden),
            att: reg(ps, rng, "att", 2 * hidden, 1),
            hidden,
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        vec![self.w_p, self.w_h, self.w_n, self.w_shared, self.att]
    }
}

pub struct AdditiveLayerOut {
    pub output: NodeId,
    pub node_alpha: NodeId,
    /// Per-pair attention normalized over each sentence's hyperedges.
    pub edge_alpha: NodeId,
}

pub fn additive_layer(
    t: &mut Tape,
    ps: &ParamSet,
    p: &AdditiveParams,
    h_prev: NodeId,
    hg: &Hypergraph,
    mut dropout: Option<&mut Dropout>,
) -> AdditiveLayerOut {
    let pairs = IncidencePairs::build(hg);
    let node = node_level_attention(
        t,
        ps,
        (p.w_p, p.w_h, p.w_n),
        h_prev,
        hg,
        &pairs,
        dropout.as_deref_mut(),
    );

    let w = t.param(p.w_shared, ps.get(p.w_shared).clone());
    let att = t.param(p.att, ps.get(p.att).clone());
    let h_proj = t.matmul(h_prev, w);
    let f_proj = t.matmul(node.f_edge, w);
    let h_pairs = t.gather_rows(h_proj, &pairs.node_of);
    let f_pairs = t.gather_rows(f_proj, &pairs.edge_of);
    let cat = t.concat_cols(&[h_pairs, f_pairs]);
    let score = t.matmul(cat, att);
    let z = t.leaky_relu(score, LEAKY_SLOPE);
    let alpha = t.segment_softmax(z, &pairs.node_of, hg.n_nodes);
    let alpha_used = maybe_apply(&mut dropout, t, alpha);
    let weighted = t.mul_col(f_pairs, alpha_used);
    let agg = t.segment_sum(weighted, &pairs.node_of, hg.n_nodes);
    let output = t.elu(agg);
    AdditiveLayerOut {
        output,
        node_alpha: node.alpha,
        edge_alpha: alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    fn hg(members: &[&[usize]], n_nodes: usize) -> Hypergraph {
        Hypergraph {
            n_nodes,
            members: members.iter().map(|m| m.to_vec()).collect(),
        }
    }

    fn self_attn_params(ps: &mut ParamSet, hidden: usize, heads: usize) -> SelfAttnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        SelfAttnParams::register(ps, &mut rng, "hs", hidden, heads)
    }

    #[test]
    fn singleton_hyperedge_node_attention_is_one() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut t = Tape::new();
        let h = t.constant(rand_mat(&mut rng, 4, 8));
        let g = hg(&[&[0, 1, 2], &[3]], 4);
        let pairs = IncidencePairs::build(&g);
        let out = node_level_attention(&mut t, &ps, p.node_level_ids(), h, &g, &pairs, None);
        let a = t.value(out.alpha);
        assert!((a[(3, 0)] - 1.0).abs() < 1e-12);
        let first: f64 = (0..3).map(|i| a[(i, 0)]).sum();
        assert!((first - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_members_share_attention_uniformly() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let row = rand_mat(&mut rng, 1, 8);
        let mut mat = Array2::zeros((3, 8));
        for i in 0..3 {
            mat.row_mut(i).assign(&row.row(0));
        }
        let mut t = Tape::new();
        let h = t.constant(mat);
        let g = hg(&[&[0, 1, 2]], 3);
        let pairs = IncidencePairs::build(&g);
        let out = node_level_attention(&mut t, &ps, p.node_level_ids(), h, &g, &pairs, None);
        let a = t.value(out.alpha);
        for i in 0..3 {
            assert!((a[(i, 0)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_hyperedge_matches_hand_arithmetic() {
        let mut ps = ParamSet::new();
        let w_p = ps.register("w_p", array![[1.0, 0.0], [0.0, 1.0]]);
        let w_h = ps.register("w_h", array![[1.0], [0.0]]);
        let w_n = ps.register("w_n", array![[2.0, 0.0], [0.0, 2.0]]);
        let h_mat = array![[0.6, -0.4], [0.2, 0.8]];
        let mut t = Tape::new();
        let h = t.constant(h_mat);
        let g = hg(&[&[0, 1]], 2);
        let pairs = IncidencePairs::build(&g);
        let out = node_level_attention(&mut t, &ps, (w_p, w_h, w_n), h, &g, &pairs, None);

        // u = LeakyReLU(h), scores via first column: s0 = 0.6, s1 = 0.2.
        let (s0, s1) = (0.6, 0.2);
        let m = f64::max(s0, s1);
        let (a0, a1) = {
            let x0 = (s0 - m).exp();
            let x1 = (s1 - m).exp();
            (x0 / (x0 + x1), x1 / (x0 + x1))
        };
        let f0 = a0 * 2.0 * 0.6 + a1 * 2.0 * 0.2;
        let f1_pre = a0 * 2.0 * (-0.4) + a1 * 2.0 * 0.8;
        let f1 = if f1_pre > 0.0 { f1_pre } else { LEAKY_SLOPE * f1_pre };
        let f = t.value(out.f_edge);
        assert!((f[(0, 0)] - f0).abs() < 1e-12, "{} vs {f0}", f[(0, 0)]);
        assert!((f[(0, 1)] - f1).abs() < 1e-12);
    }

    #[test]
    fn single_hyperedge_edge_attention_returns_value_row() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = hg(&[&[0, 1, 2]], 3);
        for masked in [true, false] {
            let mut t = Tape::new();
            let h = t.constant(rand_mat(&mut rng, 3, 8));
            let f = t.constant(rand_mat(&mut rng, 1, 8));
            let out = edge_level_attention(&mut t, &ps, &p, h, f, &g, masked, None);
            for probs in &out.head_probs {
                let pv = t.value(*probs);
                for i in 0..3 {
                    assert!((pv[(i, 0)] - 1.0).abs() < 1e-12);
                }
            }
            // Output rows all equal the single V row, head-concatenated.
            let y = t.value(out.output);
            for i in 1..3 {
                let diff = (&y.row(i) - &y.row(0)).mapv(f64::abs).sum();
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn masked_and_dense_attention_differ_on_multi_edge_graphs() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = hg(&[&[0, 1], &[2, 3]], 4);
        let h_mat = rand_mat(&mut rng, 4, 8);
        let f_mat = rand_mat(&mut rng, 2, 8);
        let run = |masked: bool| {
            let mut t = Tape::new();
            let h = t.constant(h_mat.clone());
            let f = t.constant(f_mat.clone());
            let out = edge_level_attention(&mut t, &ps, &p, h, f, &g, masked, None);
            t.value(out.output).clone()
        };
        assert_ne!(run(true), run(false));
    }

    #[test]
    fn masked_rows_are_normalized_over_incident_edges_only() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let g = hg(&[&[0, 1], &[1, 2, 3]], 4);
        let mut t = Tape::new();
        let h = t.constant(rand_mat(&mut rng, 4, 8));
        let f = t.constant(rand_mat(&mut rng, 2, 8));
        let out = edge_level_attention(&mut t, &ps, &p, h, f, &g, true, None);
        let inc = g.incidence_dense();
        for probs in &out.head_probs {
            let pv = t.value(*probs);
            for i in 0..4 {
                let sum: f64 = pv.row(i).sum();
                assert!((sum - 1.0).abs() < 1e-6);
                for j in 0..2 {
                    if inc[(i, j)] == 0.0 {
                        assert_eq!(pv[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_keeps_rows_and_blends_both_inputs() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let prev_mat = rand_mat(&mut rng, 5, 8);
        let att_mat = rand_mat(&mut rng, 5, 8);
        let mut t = Tape::new();
        let prev = t.constant(prev_mat.clone());
        let att = t.constant(att_mat.clone());
        let fused = fuse(&mut t, &ps, &p, prev, att);
        let y = t.value(fused);
        assert_eq!(y.nrows(), 5);
        assert_ne!(y, &prev_mat);
        assert_ne!(y, &att_mat);
    }

    #[test]
    fn zeroed_attended_branch_ignores_attended_features() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        ps.get_mut(p.w_2).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let prev_mat = rand_mat(&mut rng, 3, 8);
        let run = |att_mat: Array2<f64>| {
            let mut t = Tape::new();
            let prev = t.constant(prev_mat.clone());
            let att = t.constant(att_mat);
            let fused = fuse(&mut t, &ps, &p, prev, att);
            t.value(fused).clone()
        };
        let mut rng2 = ChaCha8Rng::seed_from_u64(29);
        let a = run(rand_mat(&mut rng2, 3, 8));
        let b = run(rand_mat(&mut rng2, 3, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn self_attn_and_additive_disagree_on_nontrivial_instances() {
        let mut ps = ParamSet::new();
        let p_s = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let p_g = AdditiveParams::register(&mut ps, &mut rng, "hg", 8);
        let g = hg(&[&[0, 1], &[2, 3]], 4);
        let h_mat = rand_mat(&mut rng, 4, 8);

        let mut t = Tape::new();
        let h = t.constant(h_mat.clone());
        let a = self_attn_layer(&mut t, &ps, &p_s, h, &g, true, None);
        let b = additive_layer(&mut t, &ps, &p_g, h, &g, None);
        assert_ne!(t.value(a.output), t.value(b.output));
    }

    #[test]
    fn additive_singleton_hyperedge_attention_is_one() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = AdditiveParams::register(&mut ps, &mut rng, "hg", 8);
        let g = hg(&[&[0]], 1);
        let mut t = Tape::new();
        let h = t.constant(rand_mat(&mut rng, 1, 8));
        let out = additive_layer(&mut t, &ps, &p, h, &g, None);
        assert!((t.value(out.edge_alpha)[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((t.value(out.node_alpha)[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_attn_gradients_match_finite_differences() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let g = hg(&[&[0, 1], &[1, 2, 3]], 4);
        let h_mat = rand_mat(&mut rng, 4, 8);
        let weights = rand_mat(&mut rng, 4, 8);

        for masked in [true, false] {
            let forward = |ps: &ParamSet| {
                let mut t = Tape::new();
                let h = t.constant(h_mat.clone());
                let out = self_attn_layer(&mut t, ps, &p, h, &g, masked, None);
                let wc = t.constant(weights.clone());
                let prod = t.mul_elem(out.output, wc);
                let loss = t.sum_all(prod);
                let grads = t.backward(loss);
                (t.value(loss)[(0, 0)], t.param_grads(&grads))
            };
            let (_, analytic) = forward(&ps);
            let ids = p.all_ids();
            let res = check_params(&mut ps, &ids, &analytic, |ps| forward(ps).0, 1e-5, 0, 0);
            assert!(
                res.passes(1e-4),
                "masked={masked}: {} at {}",
                res.max_rel_err,
                res.worst_param
            );
        }
    }

    #[test]
    fn additive_gradients_match_finite_differences() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = AdditiveParams::register(&mut ps, &mut rng, "hg", 8);
        let g = hg(&[&[0, 1, 2], &[2, 3]], 4);
        let h_mat = rand_mat(&mut rng, 4, 8);
        let weights = rand_mat(&mut rng, 4, 8);

        let forward = |ps: &ParamSet| {
            let mut t = Tape::new();
            let h = t.constant(h_mat.clone());
            let out = additive_layer(&mut t, ps, &p, h, &g, None);
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

    #[test]
    fn layer_is_equivariant_under_sentence_permutation() {
        let mut ps = ParamSet::new();
        let p = self_attn_params(&mut ps, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let h_mat = rand_mat(&mut rng, 4, 8);
        let g1 = hg(&[&[0, 1], &[2, 3]], 4);
        // Permutation (0 1 2 3) -> (2 0 3 1): row r of the permuted input
        // is original row perm[r].
        let perm = [2usize, 0, 3, 1];
        let mut h2_mat = Array2::zeros((4, 8));
        for (r, &src) in perm.iter().enumerate() {
            h2_mat.row_mut(r).assign(&h_mat.row(src));
        }
        // Relabel members: original node k now sits at position inv[k].
        let mut inv = [0usize; 4];
        for (r, &src) in perm.iter().enumerate() {
            inv[src] = r;
        }
        let mut e0 = vec![inv[0], inv[1]];
        let mut e1 = vec![inv[2], inv[3]];
        e0.sort();
        e1.sort();
        let g2 = hg(&[e0.as_slice(), e1.as_slice()], 4);

        let run = |h_in: &Array2<f64>, g: &Hypergraph| {
            let mut t = Tape::new();
            let h = t.constant(h_in.clone());
            let out = self_attn_layer(&mut t, &ps, &p, h, g, true, None);
            t.value(out.output).clone()
        };
        let y1 = run(&h_mat, &g1);
        let y2 = run(&h2_mat, &g2);
        for (r, &src) in perm.iter().enumerate() {
            let diff = (&y2.row(r) - &y1.row(src)).mapv(f64::abs).sum();
            assert!(diff < 1e-9, "row {r}: {diff}");
        }
    }
}
